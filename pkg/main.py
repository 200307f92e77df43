import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

# --- Backend Imports ---
from configuration import Configuration, ConfigurationError, get_available_preset_names
from processing import experiments
from processing import phantoms_metrics as pm
from processing import sphere_harmonics as sh
from processing import volume_core
from processing import wavelet_dft as wd
from processing import wavelet_zernike as wz
from processing.errors import FormatError, NumericError, ParameterError, ProvenanceError
from processing.pipeline.run_context import RunContext
from processing.score_transform import load_score, save_score
from processing.utils import preview_utils
from processing_engine import ProcessingEngine
from run_structure import RunManifest

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_PARAMETER = 2
EXIT_FORMAT = 3
EXIT_NUMERIC = 4


# --- Setup Logging ---
def setup_logging(verbose: bool):
    """Configures logging for the application."""
    log_level = logging.DEBUG if verbose else logging.INFO
    log_format = '%(asctime)s [%(levelname)-8s] %(name)s: %(message)s'
    date_format = '%Y-%m-%d %H:%M:%S'

    # Remove existing handlers to avoid duplication if re-run in same session
    for handler in logging.root.handlers[:]:
        logging.root.removeHandler(handler)

    logging.basicConfig(
        level=log_level,
        format=log_format,
        datefmt=date_format,
        handlers=[
            logging.StreamHandler(sys.stdout)
        ]
    )
    log = logging.getLogger(__name__)
    log.debug(f"Logging level set to: {logging.getLevelName(log_level)}")

log = logging.getLogger(__name__)


# --- Argument Parser Setup ---
def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected a comma-separated list of numbers, got '{text}'")


def _pad_setting(text: str):
    if text == "auto":
        return text
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected 'auto' or an integer, got '{text}'")


def setup_arg_parser():
    """Sets up and returns the command-line argument parser."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-p", "--preset",
        type=str,
        default="default",
        help=f"Name of the configuration preset. Available: {', '.join(get_available_preset_names()) or 'none'}."
    )
    common.add_argument(
        "--threads",
        type=int,
        default=None,
        help="Worker threads for FFTs and per-orientation loops (default: FFT_WORKERS from the settings)."
    )
    common.add_argument(
        "--report",
        type=str,
        default=None,
        help="Path of the JSON run manifest (default: next to the output)."
    )
    common.add_argument(
        "--previews",
        action="store_true",
        help="Write center-slice PNG previews next to the outputs."
    )
    common.add_argument(
        "-v", "--verbose",
        action="store_true",
        help="Enable detailed DEBUG level logging for troubleshooting."
    )

    parser = argparse.ArgumentParser(
        prog="os",
        description="Invertible 3D orientation scores: wavelet design, transforms, diffusion and tubularity.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, parents=[common], help=help_text,
                              formatter_class=argparse.ArgumentDefaultsHelpFormatter)

    p = add("design", "Build a wavelet bank (cake/DFT or Zernike).")
    p.add_argument("--kind", choices=("dft", "zernike"), default="dft", help="Filter design.")
    p.add_argument("--no", dest="n_orientations", type=int, default=None, help="Number of orientations.")
    p.add_argument("--gamma", type=float, default=None, help="Cutoff as a fraction of Nyquist (DFT).")
    p.add_argument("--so", dest="s_o", type=float, default=None, help="Angular scale s_o.")
    p.add_argument("--srho", dest="s_rho", type=float, default=None, help="Low-pass scale s_rho.")
    p.add_argument("--dims", type=int, default=None, help="Odd filter grid size per axis.")
    p.add_argument("--alpha", type=float, default=None, help="Zernike weight exponent.")
    p.add_argument("--seed", type=int, default=None, help="Seed for the orientation design.")
    p.add_argument("--design", dest="design_file", type=str, default=None, help="Load orientations from a design JSON.")
    p.add_argument("--save-design", type=str, default=None, help="Also write the orientation design JSON.")
    p.add_argument("-o", "--output", required=True, help="Output bank directory (.osb).")

    p = add("transform", "Lift a volume to an orientation score.")
    p.add_argument("-i", "--input", required=True, help="Input f32 volume.")
    p.add_argument("-b", "--bank", required=True, help="Wavelet bank directory.")
    p.add_argument("--pad", type=_pad_setting, default=None, help="'auto' or voxels of edge padding.")
    p.add_argument("-o", "--output", required=True, help="Output score directory (.oss).")

    p = add("reconstruct", "Map an orientation score back to a volume.")
    p.add_argument("-i", "--input", required=True, help="Score directory.")
    p.add_argument("-b", "--bank", default=None, help="Wavelet bank (required for --mode exact).")
    p.add_argument("--mode", choices=("exact", "sum"), default="exact", help="Inverse to apply.")
    p.add_argument("-o", "--output", required=True, help="Output f32 volume.")

    p = add("stability", "Tabulate the stability bounds of a bank or of s_o values.")
    p.add_argument("-b", "--bank", default=None, help="DFT bank directory (default: preset parameters).")
    p.add_argument("--so-list", type=_float_list, default=None, help="Comma-separated s_o values to sweep.")
    p.add_argument("--fine-dims", type=int, default=None, help="Fine grid size per axis.")
    p.add_argument("-o", "--output", required=True, help="Output CSV.")

    p = add("cedos", "Crossing-preserving diffusion: transform, diffuse, reconstruct.")
    p.add_argument("-i", "--input", required=True, help="Input f32 volume.")
    p.add_argument("-b", "--bank", required=True, help="Wavelet bank directory.")
    p.add_argument("-T", dest="end_time", type=float, default=None, help="Diffusion time.")
    p.add_argument("--dt", type=float, default=None, help="Time step.")
    p.add_argument("--d44", type=float, default=None, help="Angular diffusivity.")
    p.add_argument("--quantile", type=float, default=None, help="Quantile for the conductivity scales.")
    p.add_argument("--sigma-s", type=float, default=None, help="Structure-tensor smoothing scale.")
    p.add_argument("--mode", choices=("exact", "sum"), default="sum", help="Inverse applied after diffusion.")
    p.add_argument("-o", "--output", required=True, help="Output f32 volume.")

    p = add("tubularity", "Tubularity features and segmentation from a score.")
    p.add_argument("-i", "--input", required=True, help="Score directory, or an f32 volume together with -b.")
    p.add_argument("-b", "--bank", default=None, help="Wavelet bank used to lift a volume input.")
    p.add_argument("--sigma-o", type=float, default=None, help="Angular regularization width.")
    p.add_argument("--sigma-r", type=float, default=None, help="Log-radial regularization width.")
    p.add_argument("--theta", dest="theta_samples", type=int, default=None, help="Samples of the edge angle.")
    p.add_argument("--rmin", dest="r_min", type=float, default=None, help="Smallest radius.")
    p.add_argument("--rmax", dest="r_max", type=float, default=None, help="Largest radius.")
    p.add_argument("--rstep", dest="r_step", type=float, default=None, help="Radius step.")
    p.add_argument("--reduce", choices=("min", "mean"), default=None, help="Reduction over the edge angle.")
    p.add_argument("-o", "--output", required=True, help="Output directory.")

    p = add("synth", "Generate a phantom volume with ground truth.")
    p.add_argument("--kind", choices=("tube", "crossing", "plate"), default="tube", help="Phantom type.")
    p.add_argument("--dims", type=int, default=None, help="Grid size per axis.")
    p.add_argument("--radius", type=_float_list, default=None, help="Radius profile along the tube.")
    p.add_argument("--noise", type=float, default=None, help="Gaussian noise standard deviation.")
    p.add_argument("--contrast", type=float, default=None, help="Tube intensity.")
    p.add_argument("--seed", type=int, default=None, help="Random seed.")
    p.add_argument("--angle", type=float, default=90.0, help="Crossing angle in degrees.")
    p.add_argument("--truth", default=None, help="Centerline CSV (default: next to the output).")
    p.add_argument("--regions", default=None, help="Regions JSON (default: next to the output).")
    p.add_argument("-o", "--output", required=True, help="Output f32 volume.")

    p = add("cnr", "Contrast-to-noise ratio of a volume.")
    p.add_argument("-i", "--input", required=True, help="Input f32 volume.")
    p.add_argument("--regions", default=None, help="Regions JSON for the region CNR.")
    p.add_argument("--clean", default=None, help="Noise-free volume for the ground-truth CNR.")

    p = add("compare-filters", "Compare the high-pass filters of two banks.")
    p.add_argument("-a", "--bank-a", required=True, help="First bank (usually DFT).")
    p.add_argument("-b", "--bank-b", required=True, help="Second bank (usually Zernike).")
    p.add_argument("-o", "--output", required=True, help="Output directory for the CSV tables.")

    p = add("roundtrip", "Forward then inverse; report the reconstruction error.")
    p.add_argument("-i", "--input", required=True, help="Input f32 volume.")
    p.add_argument("-b", "--bank", required=True, help="Wavelet bank directory.")
    p.add_argument("--mode", choices=("exact", "sum"), default="exact", help="Inverse to apply.")
    p.add_argument("--band-fraction", type=float, default=0.8, help="Band limit as a fraction of the cutoff.")
    p.add_argument("-o", "--output", required=True, help="Output directory.")

    p = add("cnr-sweep", "CNR against diffusion time for CEDOS and Gaussian blurring.")
    p.add_argument("-i", "--input", required=True, help="Input f32 volume.")
    p.add_argument("-b", "--bank", default=None, help="Wavelet bank (required for the cedos method).")
    p.add_argument("--regions", required=True, help="Regions JSON.")
    p.add_argument("--method", choices=("cedos", "gauss", "both"), default="both", help="Methods to sweep.")
    p.add_argument("--times", type=_float_list, default=None, help="Comma-separated diffusion times.")
    p.add_argument("--dt", type=float, default=None, help="Time step.")
    p.add_argument("--d44", type=float, default=None, help="Angular diffusivity.")
    p.add_argument("-o", "--output", required=True, help="Output CSV.")
    return parser


# --- Helpers ---
def _default_report_path(output: Optional[str], config: Configuration) -> Optional[Path]:
    if output is None:
        return None
    out = Path(output)
    return out.parent / f"{out.stem}_{config.output_settings.get('report_filename', 'run_manifest.json')}"


def _load_bank(path: str, manifest: RunManifest, label: str = "bank") -> wd.WaveletBank:
    manifest.add_input(label, path)
    return wd.load_bank(path)


def _load_volume(path: str, manifest: RunManifest, label: str = "volume") -> volume_core.Volume:
    volume = volume_core.read_volume(path)
    manifest.add_input(label, path)
    return volume


def _context(args, config: Configuration, output_dir: Optional[Path] = None) -> RunContext:
    return RunContext(config_obj=config, output_dir=output_dir, workers=args.threads, previews=args.previews)


# --- Subcommands ---
def cmd_design(args, config: Configuration, manifest: RunManifest) -> None:
    dims = [args.dims] * 3 if args.dims is not None else None
    design = None
    if args.design_file:
        design = sh.load_design(args.design_file)
        manifest.add_input("design", args.design_file)
    if args.kind == "dft":
        config.override("CAKE_WAVELET", n_orientations=args.n_orientations, gamma=args.gamma, s_o=args.s_o,
                        s_rho=args.s_rho, filter_dims=dims, seed=args.seed)
        bank = wd.build_bank(config.cake_params, design, workers=args.threads)
    else:
        config.override("ZERNIKE_WAVELET", n_orientations=args.n_orientations, alpha=args.alpha, s_o=args.s_o,
                        s_rho=args.s_rho, filter_dims=dims, seed=args.seed)
        bank = wz.build_zernike_bank(config.zernike_params, design, workers=args.threads)
    out = wd.save_bank(bank, args.output)
    manifest.add_output("bank", out)
    if args.save_design:
        sh.save_design(bank.design, args.save_design)
        manifest.add_output("design", args.save_design)
    manifest.results.update({
        "kind": bank.kind,
        "orientations": bank.count,
        "filter_dims": list(bank.filter_dims),
        "bank_hash": bank.bank_hash,
        "design_min_angle": float(bank.design.min_angle()),
    })
    if args.previews:
        preview_utils.save_preview(Path(args.output).with_suffix(".png"), wd.high_pass_filters(bank)[0].real)


def cmd_transform(args, config: Configuration, manifest: RunManifest) -> None:
    config.override("TRANSFORM", pad=args.pad)
    context = _context(args, config)
    context.volume = _load_volume(args.input, manifest)
    context.bank = _load_bank(args.bank, manifest)
    context = ProcessingEngine(config).run("transform", context, manifest)
    out = save_score(context.score, args.output)
    manifest.add_output("score", out)
    if args.previews:
        energy = np.max(np.abs(context.score.data), axis=0)
        preview_utils.save_preview(Path(args.output).with_suffix(".png"), energy)


def cmd_reconstruct(args, config: Configuration, manifest: RunManifest) -> None:
    context = _context(args, config)
    context.score = load_score(args.input)
    manifest.add_input("score", args.input)
    if args.mode == "exact":
        if args.bank is None:
            raise ParameterError("--mode exact needs the bank (-b)")
        context.bank = _load_bank(args.bank, manifest)
    context = ProcessingEngine(config).run("reconstruct", context, manifest, mode=args.mode)
    volume_core.write_volume(context.reconstruction, args.output)
    manifest.add_output("volume", args.output)
    if args.previews:
        preview_utils.save_preview(Path(args.output).with_suffix(".png"), context.reconstruction.data)


def cmd_stability(args, config: Configuration, manifest: RunManifest) -> None:
    settings = config.transform_settings
    fine = [args.fine_dims] * 3 if args.fine_dims else settings.get("stability_fine_dims", [64, 64, 64])
    kwargs = {"fine_dims": tuple(fine), "n_directions": settings.get("stability_directions", 500),
              "n_radii": settings.get("stability_radii", 16)}
    manifest.parameters["stability"] = {"fine_dims": list(fine), "n_directions": kwargs["n_directions"],
                                        "n_radii": kwargs["n_radii"]}
    if args.bank:
        bank = _load_bank(args.bank, manifest)
        if bank.kind != "dft":
            raise ParameterError(f"Stability tables apply to DFT cake banks, got a {bank.kind} bank")
        params = wd.CakeParams.from_dict(bank.params)
    else:
        bank, params = None, config.cake_params
    if args.so_list:
        rows = wd.stability_curves(params, args.so_list, **kwargs)
    else:
        report = wd.stability_report(bank if bank is not None else params, **kwargs)
        rows = [{"s_o": params.s_o, **report.to_dict()}]
    header = list(rows[0].keys())
    preview_utils.write_csv(args.output, header, [[row[k] for k in header] for row in rows])
    manifest.add_output("table", args.output)
    manifest.results["rows"] = rows
    failing = [row["s_o"] for row in rows if not row["invertible"]]
    if failing and not args.so_list:
        raise NumericError(f"Bank is not invertible on the sampled ball (min M = {rows[0]['m_min']:.3g})")
    if failing:
        log.warning(f"Not invertible for s_o in {failing}")


def cmd_cedos(args, config: Configuration, manifest: RunManifest) -> None:
    config.override("DIFFUSION", end_time=args.end_time, dt=args.dt, d44=args.d44,
                    quantile=args.quantile, sigma_s=args.sigma_s)
    context = _context(args, config)
    context.volume = _load_volume(args.input, manifest)
    context.bank = _load_bank(args.bank, manifest)
    context = ProcessingEngine(config).run("cedos", context, manifest, mode=args.mode)
    volume_core.write_volume(context.reconstruction, args.output)
    manifest.add_output("volume", args.output)
    if args.previews:
        preview_utils.save_preview(Path(args.output).with_suffix(".png"), context.reconstruction.data)


def cmd_tubularity(args, config: Configuration, manifest: RunManifest) -> None:
    config.override("TUBULARITY", sigma_o=args.sigma_o, sigma_r=args.sigma_r, theta_samples=args.theta_samples,
                    r_min=args.r_min, r_max=args.r_max, r_step=args.r_step, reduce=args.reduce)
    context = _context(args, config, Path(args.output))
    if Path(args.input).is_dir():
        context.score = load_score(args.input)
        manifest.add_input("score", args.input)
    else:
        if args.bank is None:
            raise ParameterError("A volume input needs the bank (-b) to be lifted")
        context.volume = _load_volume(args.input, manifest)
        context.bank = _load_bank(args.bank, manifest)
    ProcessingEngine(config).run("tubularity", context, manifest)


def cmd_synth(args, config: Configuration, manifest: RunManifest) -> None:
    config.override("PHANTOM", dims=[args.dims] * 3 if args.dims else None, radius=args.radius,
                    noise=args.noise, contrast=args.contrast, seed=args.seed)
    spec = config.phantom_spec
    out = Path(args.output)
    truths = None
    if args.kind == "tube":
        volume, truth = pm.make_tube(spec)
        truths = [truth]
    elif args.kind == "crossing":
        volume, truths = pm.make_crossing(spec, angle_deg=args.angle)
    else:
        volume = pm.make_plate(spec)
    volume_core.write_volume(volume, out)
    manifest.add_output("volume", out)
    manifest.parameters["synth"] = {"kind": args.kind, "angle": args.angle}
    if truths is not None:
        truth_path = Path(args.truth) if args.truth else out.with_name(out.stem + "_truth.csv")
        regions_path = Path(args.regions) if args.regions else out.with_name(out.stem + "_regions.json")
        pm.write_truth_csv(truths, truth_path)
        pm.write_regions(pm.regions_from_truth(truths, spec.dims), regions_path)
        manifest.add_output("truth", truth_path)
        manifest.add_output("regions", regions_path)
    if args.previews:
        preview_utils.save_preview(out.with_suffix(".png"), volume.data)


def cmd_cnr(args, config: Configuration, manifest: RunManifest) -> None:
    if args.regions is None and args.clean is None:
        raise ParameterError("cnr needs --regions, --clean, or both")
    volume = _load_volume(args.input, manifest)
    if args.regions:
        regions = pm.read_regions(args.regions)
        manifest.add_input("regions", args.regions)
        manifest.results["cnr"] = pm.cnr(volume, regions)
    if args.clean:
        clean = _load_volume(args.clean, manifest, "clean")
        manifest.results["cnr_ground_truth"] = pm.cnr_ground_truth(volume, clean)
    print(json.dumps(manifest.results, indent=4))


def cmd_compare_filters(args, config: Configuration, manifest: RunManifest) -> None:
    bank_a = _load_bank(args.bank_a, manifest, "bank_a")
    bank_b = _load_bank(args.bank_b, manifest, "bank_b")
    rows = experiments.compare_filters(bank_a, bank_b)
    out = Path(args.output)
    header = list(rows[0].keys())
    tables = {
        "comparison": (out / "comparison.csv", header, [[row[k] for k in header] for row in rows]),
        "slices_a": (out / "slices_a.csv", ["orientation", "u", "v", "re", "im"], experiments.filter_slice_rows(bank_a)),
        "slices_b": (out / "slices_b.csv", ["orientation", "u", "v", "re", "im"], experiments.filter_slice_rows(bank_b)),
    }
    for label, (path, head, table) in tables.items():
        preview_utils.write_csv(path, head, table)
        manifest.add_output(label, path)
    manifest.results["min_correlation"] = min(row["correlation"] for row in rows)
    manifest.results["max_residual"] = max(row["residual"] for row in rows)


def cmd_roundtrip(args, config: Configuration, manifest: RunManifest) -> None:
    volume = _load_volume(args.input, manifest)
    bank = _load_bank(args.bank, manifest)
    result = experiments.roundtrip(volume, bank, args.mode, workers=args.threads, band_fraction=args.band_fraction)
    out = Path(args.output)
    rec_path = out / "reconstruction.f32"
    volume_core.write_volume(result.reconstruction, rec_path)
    manifest.add_output("reconstruction", rec_path)
    src = preview_utils.center_slice(volume.data)
    rec = preview_utils.center_slice(result.reconstruction.data)
    slice_rows = [[u, v, float(src[u, v]), float(rec[u, v]), float(rec[u, v] - src[u, v])]
                  for u, v in np.ndindex(src.shape)]
    slice_path = out / "center_slice.csv"
    preview_utils.write_csv(slice_path, ["u", "v", "input", "reconstruction", "difference"], slice_rows)
    manifest.add_output("center_slice", slice_path)
    manifest.results.update(result.to_dict())
    if args.previews:
        preview_utils.save_preview(out / "reconstruction.png", result.reconstruction.data)


def cmd_cnr_sweep(args, config: Configuration, manifest: RunManifest) -> None:
    config.override("DIFFUSION", dt=args.dt, d44=args.d44)
    volume = _load_volume(args.input, manifest)
    regions = pm.read_regions(args.regions)
    manifest.add_input("regions", args.regions)
    methods = experiments.SWEEP_METHODS if args.method == "both" else (args.method,)
    bank = _load_bank(args.bank, manifest) if args.bank else None
    times = args.times if args.times is not None else config.output_settings.get("sweep_times", [1.0])
    manifest.parameters["sweep"] = {"methods": list(methods), "times": list(times)}
    rows = experiments.cnr_sweep(volume, bank, regions, times, methods, config.diffusion_config, args.threads)
    preview_utils.write_csv(args.output, ["method", "T", "cnr", "peak"],
                            [[r["method"], r["T"], r["cnr"], int(r["peak"])] for r in rows])
    manifest.add_output("table", args.output)
    manifest.results["summary"] = experiments.sweep_summary(rows)


COMMANDS: Dict[str, Callable] = {
    "design": cmd_design,
    "transform": cmd_transform,
    "reconstruct": cmd_reconstruct,
    "stability": cmd_stability,
    "cedos": cmd_cedos,
    "tubularity": cmd_tubularity,
    "synth": cmd_synth,
    "cnr": cmd_cnr,
    "compare-filters": cmd_compare_filters,
    "roundtrip": cmd_roundtrip,
    "cnr-sweep": cmd_cnr_sweep,
}


def classify_error(error: BaseException) -> Tuple[int, str]:
    """Exit code and short kind for an error raised by a subcommand."""
    if isinstance(error, NumericError):
        return EXIT_NUMERIC, "numeric"
    if isinstance(error, (ParameterError, ConfigurationError)):
        return EXIT_PARAMETER, "parameter"
    if isinstance(error, ProvenanceError):
        return EXIT_FORMAT, "provenance"
    if isinstance(error, (FormatError, FileNotFoundError)):
        return EXIT_FORMAT, "format"
    return EXIT_INTERNAL, "internal"


# --- Main Execution ---
def main(argv: Optional[List[str]] = None) -> int:
    parser = setup_arg_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)

    manifest = RunManifest(subcommand=args.command)
    manifest.start()
    config = None
    try:
        config = Configuration(args.preset)
        manifest.tool_version = config.app_version
        manifest.preset_name = config.preset_name
        if args.threads is None:
            args.threads = config.fft_workers
        if args.threads < 1:
            raise ParameterError(f"--threads must be positive, got {args.threads}")
        volume_core.set_fft_workers(args.threads)
        args.previews = args.previews or bool(config.output_settings.get("previews", False))
        COMMANDS[args.command](args, config, manifest)
        manifest.parameters["settings"] = config.as_dict()
        manifest.finish()
        exit_code = EXIT_OK
    except Exception as e:
        exit_code, kind = classify_error(e)
        if kind == "internal":
            log.exception(f"Unexpected error in '{args.command}'")
        reason = " ".join(str(e).split())
        manifest.fail(kind, reason)
        if config is not None:
            manifest.parameters["settings"] = config.as_dict()
        print(f"error: {kind}: {reason}", file=sys.stderr)

    report_path = Path(args.report) if args.report else (
        _default_report_path(getattr(args, "output", None), config) if config is not None else None)
    if report_path is not None:
        manifest.save(report_path)
        log.info(f"Run manifest written to {report_path}")
    log.debug(f"Run fingerprint: {manifest.fingerprint()}")
    return exit_code


if __name__ == "__main__":
    sys.exit(main())
