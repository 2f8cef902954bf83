"""Command-line entry point.

Every subcommand prints one JSON summary line on success. Exit status is
0 on success, 1 for usage errors and 2 for data errors (including a
reconstruction tolerance that is not met).
"""

from __future__ import annotations

import argparse
import configparser
import glob
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import pipelines, vos
from .bench import data_rate, stage_names, throughput_bench, write_rate_csv
from .colorimetry import cube_to_rgb, spectrum_to_xyz, to_8bit, xyz_to_xy
from .encoder import MosaicLayout, RawFrame, SensorModel, load_bank, mosaic_sample, save_bank
from .errors import HyperflowError, InputError, UsageError
from .mapping import cluster_map, write_cluster_spectra_csv
from .metrics import ConfusionMatrix, confusion_matrix, write_confusion_csv
from .netpbm import read_pgm, write_pgm, write_ppm
from .reconstruct import decode_spectra, demosaic, spectral_difference, write_histogram_csv
from .scene import general_library, mixture_scene, parse_scene, render_scene_video, turntable_scene
from .spectral import CubeStream, WavelengthGrid, default_grid, load_cube, store_cube
from .training import build_training_matrix, pca_components, project_physical

ENV_WORKERS = "HYPERFLOW_WORKERS"


class _UsageExit(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageExit(message)


def _sci(x) -> str:
    """Compact scientific notation: 6.0914e11."""
    mant, exp = f"{float(x):.4e}".split("e")
    return f"{mant}e{int(exp)}"


def _summary(command: str, **fields) -> dict:
    return {"command": command, "status": "ok", **fields}


def _mkdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _expand(paths, pattern: str):
    """Directories expand to their sorted ``pattern`` matches; files pass through."""
    out = []
    for p in paths:
        if os.path.isdir(p):
            out.extend(sorted(glob.glob(os.path.join(p, pattern))))
        else:
            out.append(p)
    if not out:
        raise UsageError(f"no files matching {pattern} in {paths}")
    return out


def _layout(text):
    if not text:
        return None
    try:
        return MosaicLayout.parse(text)
    except HyperflowError as exc:
        raise UsageError(str(exc)) from exc


def _sensor(text):
    try:
        return SensorModel.parse(text)
    except HyperflowError as exc:
        raise UsageError(str(exc)) from exc


def _figures(args) -> bool:
    return not getattr(args, "no_figures", False)


# --- raw frame files (.npy + .json sidecar) ----------------------------------

def save_raw(raw: RawFrame, path) -> None:
    path = Path(path)
    np.save(path, np.ascontiguousarray(raw.values, dtype=np.float64))
    meta = {"layout": raw.layout.format(), "sensor": raw.sensor.format(), "bank_id": raw.bank_id,
            "shape": list(raw.values.shape)}
    path.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")


def load_raw(path) -> RawFrame:
    path = Path(path)
    values = np.load(path, allow_pickle=False)
    meta = json.loads(path.with_suffix(".json").read_text())
    return RawFrame(values, MosaicLayout.parse(meta["layout"]), meta["bank_id"],
                    SensorModel.parse(meta["sensor"]))


# --- subcommands -------------------------------------------------------------

def cmd_synth(args):
    out = _mkdir(args.out)
    grid = default_grid()
    files = []
    if args.scene == "mixture":
        lib = general_library(grid, n=args.library_size, seed=args.library_seed).matrix()
        for t in range(args.frames):
            cube = mixture_scene(lib, grid, args.size, args.size, seed=args.seed + t, noise=args.noise)
            name = out / f"cube_{t:04d}.hsc"
            store_cube(cube, name)
            files.append(name.name)
    else:
        if args.scene == "turntable":
            desc = turntable_scene(args.size, omega=args.omega, noise=args.noise,
                                   separation=args.separation)
        else:
            desc = parse_scene(Path(args.scene).read_text())
        for t, frame in enumerate(render_scene_video(desc, args.frames, seed=args.seed)):
            store_cube(frame.cube, out / f"cube_{t:04d}.hsc")
            write_pgm(out / f"mask_{t:04d}.pgm", frame.mask)
            files.append(f"cube_{t:04d}.hsc")
        with open(out / "classes.csv", "w") as fh:
            fh.write("class,name\n")
            for k in sorted(desc.class_names):
                fh.write(f"{k},{desc.class_names[k]}\n")
    return _summary("synth", out=str(out), frames=len(files))


def cmd_train_bank(args):
    cubes = [load_cube(p) for p in _expand(args.inputs, "*.hsc")]
    data = build_training_matrix(cubes, args.max_samples, seed=args.seed, center=args.center)
    res = pca_components(data, args.components)
    bank = project_physical(res.bank) if args.physical else res.bank
    save_bank(bank, args.out)
    if _figures(args):
        from .plotting import plot_bank
        plot_bank(bank, Path(args.out).with_suffix(".png"))
    return _summary("train-bank", out=str(args.out), components=bank.n_encoders, mode=bank.mode,
                    samples=data.n_samples, bank_id=bank.digest())


def cmd_encode(args):
    cube = load_cube(args.input)
    bank = load_bank(args.bank)
    raw = mosaic_sample(cube, bank, _layout(args.layout), _sensor(args.sensor), args.workers)
    save_raw(raw, args.out)
    return _summary("encode", out=str(args.out), shape=list(raw.shape), bank_id=raw.bank_id)


def cmd_reconstruct(args):
    raw = load_raw(args.raw)
    bank = load_bank(args.bank)
    if raw.bank_id != bank.digest():
        raise InputError("raw frame was encoded with a different bank")
    est = decode_spectra(demosaic(raw), bank)
    store_cube(est, args.out)
    summary = _summary("reconstruct", out=str(args.out))
    if args.reference:
        ref = load_cube(args.reference)
        _, s = spectral_difference(ref, est, bins=args.bins)
        base = Path(args.out).with_suffix("")
        write_histogram_csv(s, f"{base}_delta.csv")
        if _figures(args):
            from .plotting import plot_delta_histogram
            plot_delta_histogram(s, f"{base}_delta.png")
        summary.update(delta_mean=s.mean, delta_median=s.median, excluded=s.n_excluded)
        if args.tolerance is not None and not s.mean < args.tolerance:
            summary.update(status="tolerance-exceeded", tolerance=args.tolerance)
            print(json.dumps(summary, sort_keys=True))
            return 2
    return summary


def cmd_cluster(args):
    cube = load_cube(args.input)
    depth = None
    if args.depth:
        depth = np.load(args.depth) if args.depth.endswith(".npy") else read_pgm(args.depth)
    cm = cluster_map(cube, depth, k=args.k, seed=args.seed, depth_weight=args.depth_weight)
    out = _mkdir(args.out)
    write_pgm(out / "labels.pgm", cm.labels.astype(np.uint8))
    write_cluster_spectra_csv(cm, out / "cluster_spectra.csv")
    if _figures(args):
        from .plotting import plot_cluster_spectra, plot_label_map
        plot_cluster_spectra(cm, out / "cluster_spectra.png")
        plot_label_map(cm.labels, out / "labels.png")
    sizes = np.bincount(cm.labels.ravel(), minlength=args.k).tolist()
    return _summary("cluster", out=str(out), k=args.k, sizes=sizes, inertia=cm.result.inertia,
                    iterations=cm.result.n_iter, reseeds=cm.result.n_reseeds)


def _featurizer(kind, bank_path, layout, sensor, workers):
    if kind == "hs":
        if not bank_path:
            raise UsageError("hyperspectral features need --bank")
        bank = load_bank(bank_path)
        return (lambda c: pipelines.hyperspectral_features(c, bank, layout, sensor, workers)), bank
    if kind == "rgb":
        return pipelines.rgb_features, None
    return (lambda c: c.data.astype(np.float64)), None


def _write_predictions(out: Path, preds, from_frame=0):
    rows = ["frame,class,pixel_count"]
    for t, pred in enumerate(preds, start=from_frame):
        write_pgm(out / f"pred_{t:04d}.pgm", pred)
        ids, counts = np.unique(pred, return_counts=True)
        rows.extend(f"{t},{int(i)},{int(n)}" for i, n in zip(ids, counts))
    (out / "index.csv").write_text("\n".join(rows) + "\n")


def cmd_ovos(args):
    paths = _expand(args.frames, "cube_*.hsc")
    featurize, _ = _featurizer(args.features, args.bank, _layout(args.layout),
                               _sensor(args.sensor), args.workers)
    frames = [featurize(load_cube(p)) for p in paths]
    if args.seed_mask:
        seed = read_pgm(args.seed_mask)
    elif args.anchor:
        i, j = (int(v) for v in args.anchor.split(","))
        seed = vos.seed_mask_from_signature(load_cube(paths[0]), (i, j), args.angle)
    else:
        raise UsageError("ovos needs --seed-mask or --anchor")
    n_ch = int(seed.max()) + 1
    in_dim = args.patch * args.patch * frames[0].shape[2]
    proj = vos.make_projection(in_dim, min(args.key_dim, in_dim) if args.key_dim else in_dim,
                               seed=args.seed)
    state = vos.OvosState(proj, args.patch, max(n_ch, 2), temperature=args.temperature,
                          bank=vos.MemoryBank(args.capacity, args.stride))
    preds = []
    for t, f in enumerate(frames):
        mask, state = vos.ovos_step(state, f, t, seed if t == 0 else None)
        preds.append(mask)
    out = _mkdir(args.out)
    _write_predictions(out, preds)
    return _summary("ovos", out=str(out), frames=len(preds), memory=state.bank.frames)


def _readout_to_json(model, meta) -> str:
    d = dict(meta)
    d["weights"] = model.weights.tolist()
    d["bias"] = model.bias.tolist()
    d["final_loss"] = model.loss_trace[-1] if model.loss_trace else None
    return json.dumps(d, sort_keys=True) + "\n"


def cmd_train_readout(args):
    paths = _expand(args.frames, "cube_*.hsc")
    mpaths = _expand(args.masks or args.frames, "mask_*.pgm")
    if len(paths) != len(mpaths):
        raise InputError(f"{len(paths)} frames but {len(mpaths)} masks")
    featurize, bank = _featurizer(args.features, args.bank, _layout(args.layout),
                                  _sensor(args.sensor), args.workers)
    feats = [featurize(load_cube(p)) for p in paths]
    masks = [read_pgm(p) for p in mpaths]
    state = pipelines.zvos_state(feats[0].shape[2], args.patch, args.key_dim, seed=args.seed)
    x, y = vos.collect_zvos_training(state, feats, masks)
    n_classes = args.classes or int(max(m.max() for m in masks)) + 1
    model = vos.train_readout(x, y, epochs=args.epochs, learning_rate=args.learning_rate,
                              seed=args.seed, n_classes=n_classes)
    meta = {"features": args.features, "patch": args.patch, "key_dim": state.projection.shape[1],
            "in_dim": state.projection.shape[0], "projection_seed": args.seed,
            "bank_id": bank.digest() if bank else None, "n_classes": n_classes,
            "layout": args.layout or None, "sensor": args.sensor}
    Path(args.out).write_text(_readout_to_json(model, meta))
    return _summary("train-readout", out=str(args.out), samples=int(y.size),
                    final_loss=model.loss_trace[-1])


def cmd_zvos(args):
    meta = json.loads(Path(args.readout).read_text())
    featurize, bank = _featurizer(meta["features"], args.bank, _layout(meta["layout"]),
                                  _sensor(meta["sensor"]), args.workers)
    if bank is not None and bank.digest() != meta["bank_id"]:
        raise InputError("bank does not match the one the readout was trained with")
    proj = vos.make_projection(meta["in_dim"], meta["key_dim"], seed=meta["projection_seed"])
    model = vos.ReadoutModel(np.array(meta["weights"]), np.array(meta["bias"]))
    state = vos.ZvosState(proj, meta["patch"], model)
    paths = _expand(args.frames, "cube_*.hsc")
    preds = pipelines.run_zvos(state, [featurize(load_cube(p)) for p in paths])
    out = _mkdir(args.out)
    _write_predictions(out, preds)
    summary = _summary("zvos", out=str(out), frames=len(preds))
    if args.masks:
        mpaths = _expand(args.masks, "mask_*.pgm")
        n = meta["n_classes"]
        cm = ConfusionMatrix(np.zeros((n, n), dtype=np.int64))
        for pred, mp in zip(preds, mpaths):
            cm = cm + confusion_matrix(pred, read_pgm(mp), n)
        write_confusion_csv(cm, out / "confusion.csv")
        if _figures(args):
            from .plotting import plot_confusion
            plot_confusion(cm, out / "confusion.png")
        summary["per_class_error"] = [None if np.isnan(e) else float(e) for e in cm.per_class_error]
    return summary


def cmd_bench(args):
    grid = WavelengthGrid.uniform(350.0, 750.0, args.bands)
    lib = general_library(grid, n=9, seed=args.seed).matrix()
    cubes = [mixture_scene(lib, grid, args.size, args.size, seed=args.seed + t, noise=0.01)
             for t in range(args.frames)]
    rep = throughput_bench(args.stage, CubeStream.from_cubes(cubes), args.repetitions,
                           workers=args.workers, warmup=args.warmup, bit_depth=args.bits, fps=args.fps)
    print(rep.to_text())
    if args.csv:
        write_rate_csv(rep, args.csv)
    return _summary("bench", stage=args.stage, samples_per_s=rep.samples_per_s, workers=args.workers,
                    digest=rep.output_digest)


def cmd_rate(args):
    rep = data_rate(args.width, args.height, args.bands, args.bits, args.fps)
    print(f"{_sci(rep.data_rate)} b/s ({rep.gbps:.5g} Gb/s, {rep.tbps:.5g} Tb/s)")
    if args.csv:
        write_rate_csv(rep, args.csv)
    return _summary("rate", data_rate=rep.data_rate, gbps=rep.gbps, tbps=rep.tbps)


def cmd_render_rgb(args):
    cube = load_cube(args.input)
    img = to_8bit(cube_to_rgb(cube, gamma=not args.linear))
    write_ppm(args.out, img)
    if _figures(args):
        from .plotting import plot_chromaticity
        xyz = spectrum_to_xyz(cube.data.reshape(-1, cube.bands).mean(axis=0), grid=cube.grid)
        plot_chromaticity(xyz_to_xy(xyz)[None, :], Path(args.out).with_suffix(".png"), ["mean"])
    return _summary("render-rgb", out=str(args.out), shape=list(img.shape))


# --- parser ------------------------------------------------------------------

def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get(ENV_WORKERS, "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI file; [common] and [<subcommand>] sections set defaults")
    common.add_argument("--workers", type=int, default=_default_workers(),
                        help=f"worker threads (default ${ENV_WORKERS} or 1)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--no-figures", action="store_true", help="skip PNG figures")

    parser = _Parser(prog="hyperflow", description="Hyperspectral encoder simulation and video analysis")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=fn)
        return p

    def encoder_opts(p):
        p.add_argument("--layout", default="", help="mosaic tile, e.g. 0,1,2;3,4,5;6,7,8")
        p.add_argument("--sensor", default="identity", help="identity | clamp:BITS:FS | logistic:G:O")

    p = add("synth", cmd_synth, "render synthetic cubes (and masks)")
    p.add_argument("--scene", default="mixture", help="mixture, turntable or a scene file")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=1)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--library-size", type=int, default=9)
    p.add_argument("--library-seed", type=int, default=3)
    p.add_argument("--omega", type=float, default=3.0)
    p.add_argument("--separation", type=float, default=1.0)

    p = add("train-bank", cmd_train_bank, "learn a PCA transmission bank")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--components", type=int, default=9)
    p.add_argument("--max-samples", type=int, default=20000)
    p.add_argument("--center", action="store_true")
    p.add_argument("--physical", action="store_true", help="project rows onto [0, 1]")

    p = add("encode", cmd_encode, "simulate the encoder mosaic")
    p.add_argument("--input", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--out", required=True, help="raw frame .npy (a .json sidecar is written too)")
    encoder_opts(p)

    p = add("reconstruct", cmd_reconstruct, "demosaic and decode a raw frame")
    p.add_argument("--raw", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--reference")
    p.add_argument("--tolerance", type=float)
    p.add_argument("--bins", type=int, default=50)

    p = add("cluster", cmd_cluster, "k-means map of a cube")
    p.add_argument("--input", required=True)
    p.add_argument("--depth")
    p.add_argument("--depth-weight", type=float, default=1.0)
    p.add_argument("-k", type=int, default=4)
    p.add_argument("--out", required=True)

    def vos_opts(p):
        p.add_argument("--frames", nargs="+", required=True)
        p.add_argument("--features", choices=("hs", "rgb", "raw"), default="hs")
        p.add_argument("--bank")
        p.add_argument("--patch", type=int, default=2)
        p.add_argument("--key-dim", type=int, default=0, help="0 keeps the full patch dimension")
        encoder_opts(p)

    p = add("ovos", cmd_ovos, "one-shot mask propagation")
    vos_opts(p)
    p.add_argument("--seed-mask")
    p.add_argument("--anchor", help="i,j pixel whose spectrum seeds the mask")
    p.add_argument("--angle", type=float, default=0.1)
    p.add_argument("--temperature", type=float, default=50.0)
    p.add_argument("--capacity", type=int, default=8)
    p.add_argument("--stride", type=int, default=5)
    p.add_argument("--out", required=True)

    p = add("train-readout", cmd_train_readout, "fit the zero-shot readout")
    vos_opts(p)
    p.add_argument("--masks", nargs="+")
    p.add_argument("--classes", type=int, default=0)
    p.add_argument("--epochs", type=int, default=800)
    p.add_argument("--learning-rate", type=float, default=0.5)
    p.add_argument("--out", required=True)

    p = add("zvos", cmd_zvos, "zero-shot segmentation with a trained readout")
    p.add_argument("--frames", nargs="+", required=True)
    p.add_argument("--readout", required=True)
    p.add_argument("--bank")
    p.add_argument("--masks", nargs="+")
    p.add_argument("--out", required=True)

    p = add("bench", cmd_bench, "measure stage throughput")
    p.add_argument("--stage", choices=stage_names(), default="encode")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--bands", type=int, default=32)
    p.add_argument("--frames", type=int, default=1)
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--bits", type=int, default=12)
    p.add_argument("--fps", type=float, default=30)
    p.add_argument("--csv")

    p = add("rate", cmd_rate, "data-rate figure of merit")
    p.add_argument("--width", type=int, default=3840)
    p.add_argument("--height", type=int, default=2160)
    p.add_argument("--bands", type=int, default=204)
    p.add_argument("--bits", type=int, default=12)
    p.add_argument("--fps", type=float, default=30)
    p.add_argument("--csv")

    p = add("render-rgb", cmd_render_rgb, "sRGB preview of a cube")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--linear", action="store_true", help="skip the sRGB transfer curve")
    return parser


_TRUE = {"1", "true", "yes", "on"}


def _apply_config(parser: argparse.ArgumentParser, command: str, path: str) -> None:
    """Turn [common] and [command] INI entries into subparser defaults."""
    cfg = configparser.ConfigParser()
    if not cfg.read(path):
        raise UsageError(f"cannot read config file {path}")
    values = {}
    for section in ("common", command):
        if cfg.has_section(section):
            values.update(cfg.items(section))
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    p = sub.choices[command]
    actions = {a.dest: a for a in p._actions}
    defaults = {}
    for key, raw in values.items():
        dest = key.replace("-", "_")
        act = actions.get(dest)
        if act is None:
            raise UsageError(f"config key {key!r} is not an option of {command}")
        if isinstance(act, argparse._StoreTrueAction):
            defaults[dest] = raw.strip().lower() in _TRUE
        elif act.nargs in ("+", "*"):
            defaults[dest] = [act.type(v) if act.type else v for v in raw.split()]
        else:
            defaults[dest] = act.type(raw) if act.type else raw
        act.required = False
    p.set_defaults(**defaults)


def _peek(argv, parser):
    """Subcommand name and --config path, found before full parsing."""
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    command = next((a for a in argv if a in sub.choices), None)
    config = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif a.startswith("--config="):
            config = a.split("=", 1)[1]
    return command, config


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        command, config = _peek(argv, parser)
        if config and command:
            _apply_config(parser, command, config)
        args = parser.parse_args(argv)
    except _UsageExit:
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"hyperflow: error: {exc}", file=sys.stderr)
        return 1
    if args.workers < 1:
        print("hyperflow: error: --workers must be at least 1", file=sys.stderr)
        return 1
    try:
        result = args.func(args)
    except UsageError as exc:
        print(f"hyperflow {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (HyperflowError, ValueError, OSError) as exc:
        print(f"hyperflow {args.command}: error: {exc}", file=sys.stderr)
        return 2
    if isinstance(result, int):
        return result
    print(json.dumps(result, sort_keys=True, default=_json_default))
    return 0


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o).__name__)


def main() -> None:
    sys.exit(run())
