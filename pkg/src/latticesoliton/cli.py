"""Batch driver: run the engines, write CSV artifacts and a manifest.

Subcommands: classical | exact | fig1 | qmc | compare | rerun.

Every run resolves its parameters (command line over config file over
defaults), dispatches, and writes ``<command>_manifest.json`` recording the
resolved parameters, seeds, version and output hashes.  Re-running a
manifest with `latticesoliton rerun` reproduces the data CSVs byte for
byte on the same platform.  CSV conventions: comma separator, '.' decimal,
LF line endings, floats at 17 significant digits.  Exit codes: 0 success,
1 runtime/convergence failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, _svg, analysis, dnlse, exact, qmc
from .core import ConfigError, LatticeConfig, RngStream, validate

OUTDIR_ENV = "LATTICESOLITON_OUTDIR"


class UsageError(Exception):
    """Bad flags, bad config file, or invalid physical configuration."""


class RunFailure(Exception):
    """The computation itself failed (non-convergence, pathology)."""


# ---------------------------------------------------------------------------
# option tables: (name, type, default, help); None default means required
# ---------------------------------------------------------------------------

_LATTICE_OPTS = [
    ("length", int, None, "number of lattice sites L"),
    ("atoms", int, None, "total atom number N"),
    ("delta", float, 1.0, "tunneling amplitude (frequency units)"),
    ("kappa", float, 0.0, "on-site interaction (negative = attractive)"),
]

OPTION_SPECS: dict[str, list[tuple]] = {
    "classical": _LATTICE_OPTS + [
        ("tol", float, dnlse.DEFAULT_TOL, "relative energy change per unit tau to stop at"),
        ("residual-tol", float, dnlse.DEFAULT_RESIDUAL_TOL, "stationarity residual tolerance"),
        ("max-iter", int, 200_000, "imaginary-time step budget"),
        ("seed-center", int, -1, "bump center site (-1 = L//2)"),
        ("seed-width", float, 2.0, "bump width in sites"),
    ],
    "exact": _LATTICE_OPTS + [
        ("beta", float, -1.0, "inverse temperature; negative = ground-state mixture"),
        ("k-lowest", int, 6, "number of lowest eigenpairs to report"),
        ("degeneracy-tol", float, exact.DEFAULT_DEGENERACY_TOL, "relative ground-degeneracy window"),
    ],
    "fig1": [
        ("lam", float, -2.309, "dimensionless coupling N*kappa/delta held fixed"),
        ("atoms-list", str, "64,256,1024", "comma-separated atom numbers"),
        ("delta", float, 1.0, "tunneling amplitude (frequency units)"),
    ],
    "qmc": _LATTICE_OPTS + [
        ("beta", float, None, "inverse temperature (inverse frequency)"),
        ("n-beta", int, -1, "Trotter steps; -1 = ceil(20*beta*max(delta,|kappa|N/L))"),
        ("samples", int, 100, "number states to retain"),
        ("stride", int, 10, "sweeps between retained samples"),
        ("thermalization", int, 1000, "minimum thermalization sweeps"),
        ("seed", int, 1, "RNG seed"),
        ("chains", int, 1, "independent chains (stream ids 0..chains-1)"),
        ("seeding", str, "auto", "auto | uniform | narrow"),
        ("seed-center", int, -1, "narrow bump center (-1 = L//2)"),
        ("seed-width", float, 2.0, "narrow bump width in sites"),
        ("dump-grid", int, 0, "1 = dump each chain's final grid snapshot"),
    ],
    "compare": [
        ("classical-csv", str, None, "profile CSV from the classical command"),
        ("samples-csv", str, None, "samples CSV from the qmc command"),
    ],
}


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="ascii", newline="") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise UsageError(f"{path}: empty CSV")
    header = lines[0].split(",")
    return header, [ln.split(",") for ln in lines[1:]]


def parse_config_file(path: Path, known: set[str]) -> dict[str, str]:
    """Line-oriented `key = value` file; '#' starts a comment; unknown keys
    are hard errors so typos cannot silently poison long runs."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in known:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value.strip()
    return values


def resolve_params(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, config file, and command-line flags (highest wins)."""
    specs = OPTION_SPECS[command]
    known = {name.replace("-", "_") for name, *_ in specs} | {"outdir"}
    params: dict = {name.replace("-", "_"): default for name, _t, default, _h in specs}

    if getattr(args, "config", None):
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise UsageError(f"config file not found: {cfg_path}")
        raw = parse_config_file(cfg_path, known)
        types = {name.replace("-", "_"): t for name, t, _d, _h in specs}
        for key, text in raw.items():
            if key == "outdir":
                if getattr(args, "outdir", None) is None:
                    args.outdir = text
                continue
            try:
                params[key] = types[key](text)
            except ValueError as exc:
                raise UsageError(f"config key {key!r}: {exc}") from exc

    for name, _t, _d, _h in specs:
        key = name.replace("-", "_")
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            params[key] = flag_value

    missing = [k for k, v in params.items() if v is None]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join('--' + m.replace('_', '-') for m in missing)}")
    return params


def resolve_outdir(args: argparse.Namespace) -> Path:
    outdir = getattr(args, "outdir", None) or os.environ.get(OUTDIR_ENV) or "."
    path = Path(outdir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(outdir: Path, command: str, params: dict, seeds: list[int],
                   outputs: list[Path], started: str) -> Path:
    manifest = {
        "command": command,
        "version": __version__,
        "parameters": params,
        "seeds": seeds,
        "started_at": started,
        "finished_at": datetime.now(timezone.utc).isoformat(),
        "outputs": [{"name": p.name, "sha256": _sha256(p)} for p in outputs],
    }
    path = outdir / f"{command}_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="ascii")
    return path


def _lattice_from(params: dict) -> LatticeConfig:
    try:
        return validate(LatticeConfig(
            L=params["length"], N=params["atoms"],
            delta=params["delta"], kappa=params["kappa"],
        ))
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_classical(params: dict, outdir: Path) -> list[Path]:
    config = _lattice_from(params)
    center = params["seed_center"] if params["seed_center"] >= 0 else config.L // 2
    seed = dnlse.gaussian_bump_seed(config, center=center, width=params["seed_width"])
    result = dnlse.imaginary_time_ground_state(
        config, seed_field=seed, tol=params["tol"],
        max_iter=params["max_iter"], residual_tol=params["residual_tol"],
    )
    profile = outdir / "classical_profile.csv"
    write_csv(profile, ["k", "density", "re", "im"],
              ((k, abs(b) ** 2, b.real, b.imag) for k, b in enumerate(result.field)))
    summary = outdir / "classical_summary.csv"
    write_csv(summary, ["mu", "energy", "iterations", "converged"],
              [(result.mu, result.energy, result.iterations, result.converged)])
    if not result.converged:
        raise RunFailure("imaginary-time relaxation did not converge; see classical_summary.csv")
    return [profile, summary]


def cmd_exact(params: dict, outdir: Path) -> list[Path]:
    config = _lattice_from(params)
    try:
        basis = exact.FockBasis(config)
        H = exact.build_hamiltonian(basis)
        spectral = exact.ground_states(H, k=params["k_lowest"], degeneracy_tol=params["degeneracy_tol"])
        if params["beta"] >= 0:
            dist = exact.thermal_distribution(H, basis, params["beta"])
        else:
            dist = exact.zero_temp_distribution(spectral, basis)
    except exact.BasisSizeError as exc:
        raise UsageError(str(exc)) from exc
    except exact.EigensolverError as exc:
        raise RunFailure(str(exc)) from exc

    spectrum = outdir / "exact_spectrum.csv"
    write_csv(spectrum, ["level", "energy", "degenerate"],
              ((i, e, bool(d)) for i, (e, d) in enumerate(zip(spectral.eigenvalues, spectral.degenerate))))
    dist_path = outdir / "exact_distribution.csv"
    occ_cols = [f"n_{k}" for k in range(config.L)]
    write_csv(dist_path, ["state", "probability"] + occ_cols,
              ((i, p, *basis.states[i]) for i, p in enumerate(dist.probabilities)))
    return [spectrum, dist_path]


def cmd_fig1(params: dict, outdir: Path) -> list[Path]:
    try:
        n_list = [int(tok) for tok in str(params["atoms_list"]).split(",") if tok.strip()]
    except ValueError as exc:
        raise UsageError(f"bad atoms-list: {exc}") from exc
    if not n_list:
        raise UsageError("atoms-list is empty")
    if any(n < 1 for n in n_list):
        raise UsageError("atom numbers must be positive")
    rows = exact.two_site_scan(n_list, params["lam"], params["delta"])

    scan = outdir / "fig1_scan.csv"
    write_csv(scan, ["N", "n", "n_over_N", "P_n", "sqrtN_Pn"],
              ((N, n, frac[n], P[n], sP[n]) for (N, frac, P, sP) in rows for n in range(N + 1)))
    overlay = outdir / "fig1_overlay.svg"
    _svg.chart(
        [{"x": frac, "y": sP, "label": f"N={N}", "mode": "line"} for (N, frac, _P, sP) in rows],
        overlay,
        title=f"two-site number statistics at N*kappa/delta = {params['lam']:g}",
        xlabel="n/N", ylabel="sqrt(N) P_n",
    )
    return [scan, overlay]


def _qmc_seeding(params: dict, config: LatticeConfig):
    mode = str(params["seeding"]).lower()
    center = params["seed_center"] if params["seed_center"] >= 0 else config.L // 2
    if mode == "auto":
        # soliton nucleation from uniform seeds becomes impractically slow
        # for large atom numbers; seed the bump directly there
        mode = "narrow" if (config.kappa < 0 and config.N >= 4 * config.L) else "uniform"
    if mode == "uniform":
        return qmc.Uniform()
    if mode == "narrow":
        return qmc.Narrow(center=center, width=params["seed_width"])
    raise UsageError(f"unknown seeding mode {params['seeding']!r}")


def cmd_qmc(params: dict, outdir: Path) -> list[Path]:
    config = _lattice_from(params)
    if params["chains"] < 1:
        raise UsageError("need at least one chain")
    try:
        seeding = _qmc_seeding(params, config)
        sampler_for = [
            qmc.SamplerConfig(
                beta=params["beta"],
                n_samples=params["samples"],
                rng=RngStream(seed=params["seed"], stream_id=chain),
                n_beta=None if params["n_beta"] < 0 else params["n_beta"],
                thermalization_sweeps=params["thermalization"],
                stride=params["stride"],
                seeding=seeding,
            )
            for chain in range(params["chains"])
        ]
        if params["chains"] == 1:
            results = [qmc.run(config, sampler_for[0])]
        else:
            with ThreadPoolExecutor(max_workers=min(params["chains"], os.cpu_count() or 1)) as pool:
                results = list(pool.map(lambda s: qmc.run(config, s), sampler_for))
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    except qmc.PathologicalAcceptance as exc:
        raise RunFailure(str(exc)) from exc

    occ_cols = [f"n_{k}" for k in range(config.L)]
    samples_path = outdir / "qmc_samples.csv"
    write_csv(samples_path, ["sample", "chain"] + occ_cols,
              ((m, c, *res.samples[m]) for c, res in enumerate(results) for m in range(len(res.samples))))

    diag_path = outdir / "qmc_diagnostics.csv"
    write_csv(diag_path, ["chain", "index", "energy"],
              ((c, i, e) for c, res in enumerate(results)
               for i, e in enumerate(res.diagnostics["sample_energy"])))

    summary_path = outdir / "qmc_summary.csv"
    write_csv(summary_path,
              ["chain", "acceptance_rate", "thermalization_sweeps", "autocorrelation_time", "n_beta", "dtau"],
              ((c, res.acceptance_rate, res.diagnostics["thermalization_sweeps_used"],
                res.diagnostics["autocorrelation_time"], res.n_beta, res.dtau)
               for c, res in enumerate(results)))

    outputs = [samples_path, diag_path, summary_path]
    if params["dump_grid"]:
        for c, res in enumerate(results):
            grid_path = outdir / f"qmc_grid_chain{c}.txt"
            qmc.dump_grid(res.diagnostics["final_grid"], grid_path)
            outputs.append(grid_path)
    return outputs


def cmd_compare(params: dict, outdir: Path) -> list[Path]:
    classical_path = Path(params["classical_csv"])
    samples_path = Path(params["samples_csv"])
    for p in (classical_path, samples_path):
        if not p.exists():
            raise UsageError(f"input not found: {p}")

    header, rows = read_csv(classical_path)
    try:
        k_col, d_col = header.index("k"), header.index("density")
    except ValueError as exc:
        raise UsageError(f"{classical_path}: expected 'k' and 'density' columns") from exc
    reference = np.array([float(r[d_col]) for r in sorted(rows, key=lambda r: int(r[k_col]))])

    header_s, rows_s = read_csv(samples_path)
    occ_idx = [i for i, name in enumerate(header_s) if name.startswith("n_")]
    if len(occ_idx) != len(reference):
        raise UsageError(
            f"lattice size mismatch: classical profile has L={len(reference)}, "
            f"samples have L={len(occ_idx)}"
        )
    samples = np.array([[int(r[i]) for i in occ_idx] for r in rows_s], dtype=np.int64)

    align_path = outdir / "compare_alignment.csv"
    records = []
    for sid, sample in enumerate(samples):
        a = analysis.align(sample, reference)
        records.append((sid, a.shift, a.distance, analysis.soliton_score(sample)))
    write_csv(align_path, ["sample", "shift", "distance", "score"], records)

    overlay = outdir / "compare_overlay.svg"
    L = len(reference)
    series = [{"x": list(range(L)), "y": reference.tolist(), "label": "classical", "mode": "line"}]
    for sid, sample in enumerate(samples[:8]):
        series.append({
            "x": list(range(L)),
            "y": analysis.align(sample, reference).aligned.tolist(),
            "label": f"sample {sid}",
            "mode": "scatter",
        })
    _svg.chart(series, overlay, title="classical profile vs aligned samples",
               xlabel="site k", ylabel="atoms n_k")
    return [align_path, overlay]


COMMANDS = {
    "classical": cmd_classical,
    "exact": cmd_exact,
    "fig1": cmd_fig1,
    "qmc": cmd_qmc,
    "compare": cmd_compare,
}

_COMMAND_HELP = {
    "classical": "relax the DNLSE to the classical ground state and write its profile",
    "exact": "diagonalize small lattices; write spectrum and number distribution",
    "fig1": "two-site scaled number distributions at fixed N*kappa/delta",
    "qmc": "world-line Monte Carlo sampling of number states",
    "compare": "align sampled number states against a classical profile",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latticesoliton",
        description="lattice bosons: classical solitons, exact statistics, world-line QMC",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for command, specs in OPTION_SPECS.items():
        p = sub.add_parser(command, help=_COMMAND_HELP[command])
        for name, typ, _default, help_text in specs:
            p.add_argument(f"--{name}", dest=name.replace("-", "_"), type=typ,
                           default=None, help=help_text)
        p.add_argument("--config", default=None, help="key = value file; flags override it")
        p.add_argument("--outdir", default=None,
                       help=f"output directory (default ${OUTDIR_ENV} or '.')")
    rerun = sub.add_parser("rerun", help="re-execute a run from its manifest")
    rerun.add_argument("manifest", help="path to a *_manifest.json")
    rerun.add_argument("--outdir", default=None, help="output directory for the reproduced files")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = datetime.now(timezone.utc).isoformat()
    try:
        if args.command == "rerun":
            manifest_path = Path(args.manifest)
            if not manifest_path.exists():
                raise UsageError(f"manifest not found: {manifest_path}")
            manifest = json.loads(manifest_path.read_text(encoding="ascii"))
            command = manifest["command"]
            if command not in COMMANDS:
                raise UsageError(f"manifest names unknown command {command!r}")
            params = manifest["parameters"]
            outdir = resolve_outdir(args)
        else:
            command = args.command
            params = resolve_params(command, args)
            outdir = resolve_outdir(args)

        outputs = COMMANDS[command](params, outdir)
        seeds = [params["seed"] + c for c in range(params.get("chains", 1))] if "seed" in params else []
        manifest_out = write_manifest(outdir, command, params, seeds, outputs, started)
        for p in outputs + [manifest_out]:
            print(p)
        return 0
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RunFailure as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
