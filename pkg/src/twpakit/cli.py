"""Batch front-end: config parsing, command dispatch, CSV/SVG emission.

Exit codes: 0 success, 2 config or schema error, 3 fit non-convergence,
4 numerical failure (instability, singular operating point).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, presets
from . import chain_model, gain_analytics, noise_calibration, squid_core, timedomain_sim
from .constants import PHI0_BAR
from .units import db_from_ratio, dbm_to_watt, watt_to_dbm

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FIT = 3
EXIT_NUMERICAL = 4


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# Config schema: flat INI sections, SI base units, unknown keys rejected.

_SCHEMA = {
    "squid": {
        "required": ["ic_a", "cj_f", "lm_h", "lp_h", "lj0l_h", "lw_h"],
        "optional": [],
    },
    "chain": {
        "required": ["n_cells", "pitch_m", "c1_f", "c2_f", "c3_f",
                      "group_len", "ordering", "z_term_ohm"],
        "optional": ["loss_tangent"],
    },
    "flux": {"required": ["phi_ext_phi0"], "optional": []},
    "pump": {"required": ["fp_hz", "pp_dbm"], "optional": ["g0_db"]},
    "sweep": {"required": ["f_start_hz", "f_stop_hz", "n_points"], "optional": []},
    "sim": {
        "required": [],
        "optional": ["n_cells_override", "tol", "settle_s", "record_s", "orders"],
    },
}

_INT_KEYS = {"n_cells", "group_len", "n_points", "n_cells_override", "orders"}
_STR_KEYS = {"ordering"}

PAPER_DEFAULTS_INI = """\
[squid]
ic_a = 0.9e-6
cj_f = 50e-15
lm_h = 60e-12
lp_h = 0.0
lj0l_h = 0.0
lw_h = 37e-12

[chain]
n_cells = 2393
pitch_m = 10e-6
c1_f = 10.5e-15
c2_f = 68.2e-15
c3_f = 50.4e-15
group_len = 6
ordering = c1,c2,c1,c3
z_term_ohm = 50.0
loss_tangent = 0.0

[flux]
phi_ext_phi0 = 0.33

[pump]
fp_hz = 12.08e9
pp_dbm = -56.0
g0_db = 20.0

[sweep]
f_start_hz = 1e9
f_stop_hz = 30e9
n_points = 2901
"""

DESK_DEFAULTS_INI = """\
[squid]
ic_a = 4.3880797e-6
cj_f = 5e-15
lm_h = 60e-12
lp_h = 0.0
lj0l_h = 0.0
lw_h = 35.6e-12

[chain]
n_cells = 720
pitch_m = 10e-6
c1_f = 10.5e-15
c2_f = 68.2e-15
c3_f = 50.4e-15
group_len = 2
ordering = c1,c2,c1,c3
z_term_ohm = 48.7
loss_tangent = 0.0

[flux]
phi_ext_phi0 = 0.3574

[pump]
fp_hz = 37.79e9
pp_dbm = -62.0

[sweep]
f_start_hz = 2e9
f_stop_hz = 90e9
n_points = 3001

[sim]
tol = 1e-3
orders = 3
"""

_BUILTIN_CONFIGS = {
    "paper_defaults": PAPER_DEFAULTS_INI,
    "desk_defaults": DESK_DEFAULTS_INI,
}


@dataclass
class RunConfig:
    """Validated configuration values plus the raw text for the manifest."""

    values: dict
    raw_text: str

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.raw_text.encode()).hexdigest()


def load_config(source: str) -> RunConfig:
    """Read and validate a config file (or a built-in name)."""
    if source in _BUILTIN_CONFIGS:
        text = _BUILTIN_CONFIGS[source]
        origin = f"builtin:{source}"
    else:
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"config file not found: {source}")
        text = path.read_text()
        origin = str(path)

    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"{origin}: {exc}") from exc

    values = {}
    for section, spec in _SCHEMA.items():
        known = set(spec["required"]) | set(spec["optional"])
        if parser.has_section(section):
            for key in parser[section]:
                if key not in known:
                    raise ConfigError(
                        f"{origin}: unknown key '{key}' in section [{section}]")
        for key in spec["required"]:
            if not parser.has_option(section, key):
                raise ConfigError(
                    f"{origin}: missing required key '{key}' in section [{section}]")
        for key in known:
            if not parser.has_option(section, key):
                continue
            raw = parser.get(section, key)
            full = f"{section}.{key}"
            if key in _STR_KEYS:
                values[full] = raw.strip()
            elif key in _INT_KEYS:
                try:
                    values[full] = int(raw)
                except ValueError as exc:
                    raise ConfigError(f"{origin}: key '{full}' must be an integer, "
                                      f"got {raw!r}") from exc
            else:
                try:
                    values[full] = float(raw)
                except ValueError as exc:
                    raise ConfigError(f"{origin}: key '{full}' must be a number, "
                                      f"got {raw!r}") from exc
    return RunConfig(values=values, raw_text=text)


def build_squid(cfg: RunConfig) -> squid_core.SquidParams:
    return squid_core.SquidParams(
        ic=cfg["squid.ic_a"], cj=cfg["squid.cj_f"], lm=cfg["squid.lm_h"],
        lp=cfg["squid.lp_h"], lj0l=cfg["squid.lj0l_h"], lw=cfg["squid.lw_h"])


def build_chain(cfg: RunConfig) -> chain_model.ChainSpec:
    squid = build_squid(cfg)
    ordering = tuple(s.strip() for s in cfg["chain.ordering"].split(","))
    pattern = chain_model.build_pattern(
        cfg["chain.c1_f"], cfg["chain.c2_f"], cfg["chain.c3_f"],
        group_len=cfg["chain.group_len"], ordering=ordering)
    flux = squid_core.FluxPoint.from_phi0_units(cfg["flux.phi_ext_phi0"],
                                                squid.beta_l)
    return chain_model.ChainSpec(
        n_cells=cfg["chain.n_cells"], pitch=cfg["chain.pitch_m"], squid=squid,
        flux=flux, pattern=pattern, z_term=cfg["chain.z_term_ohm"],
        loss_tangent=cfg.get("chain.loss_tangent", 0.0))


def sweep_grid(cfg: RunConfig) -> np.ndarray:
    return np.linspace(cfg["sweep.f_start_hz"], cfg["sweep.f_stop_hz"],
                       cfg["sweep.n_points"])


# ---------------------------------------------------------------------------
# CSV / SVG emission


def _fmt(value) -> str:
    # shortest decimal that round-trips; plain text for everything else
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def read_csv(path: Path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    return header, rows


def _plot_csv(csv_path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    header, rows = read_csv(csv_path)
    if not rows:
        return
    try:
        data = np.array([[float(v) for v in row] for row in rows])
    except ValueError:
        return  # non-numeric CSV (e.g. labelled quantities); no chart
    fig, ax = plt.subplots(figsize=(6, 4))
    x = data[:, 0]
    for col in range(1, data.shape[1]):
        ax.plot(x, data[:, col], label=header[col])
    ax.set_xlabel(header[0])
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(csv_path.with_suffix(".svg"), format="svg",
                metadata={"Date": None})
    plt.close(fig)


def write_manifest(outdir: Path, cfg: RunConfig | None, argv, seed) -> None:
    import numba
    import scipy

    lines = [
        f"twpakit {__version__}",
        f"command: {' '.join(argv)}",
        f"config_sha256: {cfg.sha256 if cfg else 'none'}",
        f"seed: {seed}",
        f"numpy {np.__version__}, scipy {scipy.__version__}, numba {numba.__version__}",
    ]
    (outdir / "run_manifest.txt").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Subcommands


def cmd_design(args, cfg: RunConfig, outdir: Path) -> int:
    chain = build_chain(cfg)
    freq = sweep_grid(cfg)
    disp = chain_model.bloch_dispersion(chain, freq)
    spec = chain_model.s21_spectrum(chain, freq)
    write_csv(outdir / "dispersion.csv",
              ["freq_hz", "k_re_rad_per_cell", "k_im_rad_per_cell"],
              zip(disp.freq, disp.k_bloch.real, disp.k_bloch.imag))
    write_csv(outdir / "stopbands.csv", ["f_lo_hz", "f_hi_hz"], disp.stopbands)
    write_csv(outdir / "s21.csv", ["freq_hz", "s21_db", "s21_phase_rad"],
              zip(spec.freq, spec.magnitude_db(), np.angle(spec.s21)))
    if args.plot:
        _plot_csv(outdir / "dispersion.csv")
        _plot_csv(outdir / "s21.csv")
    return EXIT_OK


def cmd_gain(args, cfg: RunConfig, outdir: Path) -> int:
    chain = build_chain(cfg)
    f_p = cfg["pump.fp_hz"]
    p_p_dbm = cfg["pump.pp_dbm"]
    freq = sweep_grid(cfg)

    grid = np.linspace(min(freq[0], 0.2e9), max(freq[-1], 1.05 * f_p), 6001)
    disp = chain_model.bloch_dispersion(chain, grid)
    k_p = disp.k_at(f_p)
    if disp.in_stopband(f_p):
        print(f"error: pump {f_p:.4g} Hz lies inside a stopband", file=sys.stderr)
        return EXIT_NUMERICAL

    coeffs = squid_core.nonlinear_coeffs(chain.squid, chain.flux.phi_dc)
    l_sq = squid_core.squid_inductance(chain.squid, chain.flux.phi_dc)
    g0_db = cfg.get("pump.g0_db")
    if g0_db is not None:
        # pump phase amplitude calibrated to the requested band-center gain
        g_n = np.arccosh(np.sqrt(10.0 ** (g0_db / 10.0)))
        phi_p = 4.0 * g_n / (abs(coeffs.beta) * k_p.real * chain.n_cells)
    else:
        phi_p = gain_analytics.pump_phase_amplitude(
            dbm_to_watt(p_p_dbm), chain.z_term, l_sq)

    rows = []
    for f_s in freq:
        if not 0.0 < f_s < f_p:
            continue
        f_i = f_p - f_s
        try:
            dk = (k_p - disp.k_at(f_s) - disp.k_at(f_i)).real
        except ValueError:
            continue
        g = gain_analytics.small_signal_gain(
            coeffs.beta, k_p.real, phi_p, chain.n_cells, f_s, f_p,
            delta_k_per_cell=dk)
        g_db = db_from_ratio(max(g, 1e-12))
        p1db = gain_analytics.compression_point(p_p_dbm, max(g_db, 1e-9), "3wm")
        rows.append((f_s, g_db, p1db.p1db_dbm))
    write_csv(outdir / "gain.csv", ["freq_hz", "gain_db", "p1db_dbm"], rows)
    if args.plot:
        _plot_csv(outdir / "gain.csv")
    return EXIT_OK


def cmd_simulate(args, cfg: RunConfig, outdir: Path) -> int:
    chain = build_chain(cfg)
    n_override = cfg.get("sim.n_cells_override")
    if n_override:
        chain.n_cells = n_override
    f_p = cfg["pump.fp_hz"]
    pump = gain_analytics.PumpConfig.from_dbm(f_p, cfg["pump.pp_dbm"])
    orders = cfg.get("sim.orders", 3)

    sim_kwargs = {}
    if cfg.get("sim.tol"):
        sim_kwargs["ss_rel_tol"] = cfg["sim.tol"]
    sim_cfg = timedomain_sim.sim_config_for_pump(
        f_p, f_max_factor=orders + 1.2,
        cap_esr=presets.DESK_CAP_ESR, **sim_kwargs)
    if cfg.get("sim.record_s"):
        sim_cfg = timedomain_sim.SimConfig(
            record_time=cfg["sim.record_s"],
            settle_time=cfg.get("sim.settle_s", 3 * cfg["sim.record_s"]),
            f_max=(orders + 1.2) * f_p, cap_esr=presets.DESK_CAP_ESR,
            **sim_kwargs)

    f_base = 1.0 / sim_cfg.record_time
    f_p = round(f_p / f_base) * f_base
    f_s = round(0.44 * f_p / f_base) * f_base

    gains = timedomain_sim.conversion_gains(
        chain, pump, f_s, orders=orders, cfg=sim_cfg, threads=args.threads)
    rows = [(gains.freqs[lab], f"G_s,{lab}", gains.forward[lab])
            for lab in gains.labels]
    rows += [(gains.freqs[lab], f"G_rev_s,{lab}", gains.backward[lab])
             for lab in gains.labels]
    write_csv(outdir / "conversion_gains.csv", ["freq_hz", "quantity", "value"], rows)

    n_exc = timedomain_sim.sideband_excess_noise(gains)
    write_csv(outdir / "sideband_noise.csv",
              ["freq_hz", "quantity", "value"],
              [(f_s, "sideband_excess_photons", n_exc),
               (f_s, "signal_gain_db", db_from_ratio(gains.g_ss))])

    phases = np.linspace(0.0, np.pi, args.phase_points, endpoint=False)
    scan = timedomain_sim.phase_sensitive_gain(chain, pump, phases, cfg=sim_cfg,
                                               threads=args.threads)
    write_csv(outdir / "phase_sensitive.csv",
              ["phase_rad", "gain_db", "preserving_gain_db"],
              zip(scan.phases, scan.gain_db, scan.preserving_gain_vs_phase_db))
    if args.plot:
        _plot_csv(outdir / "phase_sensitive.csv")
    return EXIT_OK


def cmd_fit_s21(args, cfg: RunConfig, outdir: Path) -> int:
    template = build_chain(cfg)
    header, rows = read_csv(Path(args.input))
    want = ["freq_hz", "s21_db", "s21_phase_rad"]
    if header[:3] != want:
        raise ConfigError(f"{args.input}: expected columns {want}, got {header[:3]}")
    has_flux = "flux_phi0" in header
    idx_flux = header.index("flux_phi0") if has_flux else None

    groups = {}
    for i, row in enumerate(rows):
        try:
            f = float(row[0]); mag_db = float(row[1]); ph = float(row[2])
            tag = float(row[idx_flux]) if has_flux else None
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"{args.input}: bad row {i + 2}: {row}") from exc
        groups.setdefault(tag, []).append((f, mag_db, ph))

    spectra = []
    for tag, pts in groups.items():
        pts.sort()
        freq = np.array([p[0] for p in pts])
        s21 = 10.0 ** (np.array([p[1] for p in pts]) / 20.0) * np.exp(
            1j * np.array([p[2] for p in pts]))
        spectra.append(chain_model.S21Spectrum(freq=freq, s21=s21, flux_phi0=tag))

    fits = chain_model.fit_cell_inductance(spectra, template)
    ok_rows = []
    for fit in fits:
        if fit.error:
            print(f"flux={fit.flux_phi0}: {fit.error}", file=sys.stderr)
        else:
            ok_rows.append((fit.flux_phi0 if fit.flux_phi0 is not None else "",
                            fit.l_cell, fit.residual_db))
    write_csv(outdir / "lcell_vs_flux.csv",
              ["flux_phi0", "l_cell_h", "residual_db"], ok_rows)
    if not ok_rows:
        return EXIT_FIT
    return EXIT_OK


def cmd_fit_flux(args, cfg: RunConfig, outdir: Path) -> int:
    header, rows = read_csv(Path(args.input))
    if header[:2] != ["flux_phi0", "l_cell_h"]:
        raise ConfigError(
            f"{args.input}: expected columns flux_phi0,l_cell_h, got {header[:2]}")
    pts = [(float(r[0]), float(r[1])) for r in rows]
    fit = chain_model.fit_flux_model(pts)
    write_csv(outdir / "flux_fit.csv",
              ["parameter", "value"],
              [("ic_a", fit.ic), ("lm_h", fit.lm), ("lw_h", fit.lw),
               ("lp_plus_lj0l_h", fit.l_parasitic),
               ("residual_rel", fit.residual)])
    return EXIT_OK


def _read_noise_csv(path: Path) -> noise_calibration.NoiseSweep:
    header, rows = read_csv(path)
    want = ["freq_hz", "temp_k", "pout_dbm", "rbw_hz"]
    if header != want:
        raise ConfigError(f"{path}: expected columns {want}, got {header}")
    data = np.array([[float(v) for v in r] for r in rows])
    return noise_calibration.NoiseSweep(freq=data[:, 0], temp=data[:, 1],
                                        pout_dbm=data[:, 2], rbw=data[:, 3])


def cmd_fit_noise(args, cfg: RunConfig, outdir: Path) -> int:
    sweep = _read_noise_csv(Path(args.input))
    if args.model == "two-mode":
        fits = noise_calibration.fit_two_mode(sweep, cfg["pump.fp_hz"],
                                              gain_ratio_db=args.gain_ratio_db)
        write_csv(outdir / "noise_fit.csv",
                  ["freq_hz", "g_sys_db", "n_sys_exc_photons", "residual_photons"],
                  [(f.freq, f.g_sys_db, f.n_sys_exc, f.residual_photons)
                   for f in fits])
    else:
        fits = noise_calibration.fit_single_mode(sweep, eta1=args.eta1)
        write_csv(outdir / "noise_fit.csv",
                  ["freq_hz", "g2_db", "n2_photons", "residual_photons"],
                  [(f.freq, f.g2_db, f.n2, f.residual_photons) for f in fits])
    if args.plot:
        _plot_csv(outdir / "noise_fit.csv")
    return EXIT_OK


def cmd_calibrate(args, cfg: RunConfig, outdir: Path) -> int:
    h1, rows1 = read_csv(Path(args.g2))
    h2, rows2 = read_csv(Path(args.roundtrip))
    f1 = np.array([float(r[0]) for r in rows1])
    g2 = np.array([float(r[1]) for r in rows1])
    f2 = np.array([float(r[0]) for r in rows2])
    rt = np.array([float(r[1]) for r in rows2])
    il = noise_calibration.insertion_loss_calibration(f1, g2, f2, rt)
    write_csv(outdir / "insertion_loss.csv", ["freq_hz", "il_db"], zip(f1, il))
    if args.plot:
        _plot_csv(outdir / "insertion_loss.csv")
    return EXIT_OK


def cmd_snr(args, cfg: RunConfig, outdir: Path) -> int:
    header, rows = read_csv(Path(args.input))
    want = ["freq_hz", "n_in_photons", "eta_t", "n2_photons", "n_t_photons",
            "g_ss_db"]
    if header != want:
        raise ConfigError(f"{args.input}: expected columns {want}, got {header}")
    out = []
    for i, row in enumerate(rows):
        try:
            f, n_in, eta_t, n2, n_t, g_ss = (float(v) for v in row)
        except ValueError as exc:
            raise ConfigError(f"{args.input}: bad row {i + 2}: {row}") from exc
        ratio = noise_calibration.delta_snr(n_in, eta_t, n2, n_t, g_ss)
        out.append((f, ratio, db_from_ratio(ratio)))
    write_csv(outdir / "delta_snr.csv",
              ["freq_hz", "delta_snr", "delta_snr_db"], out)
    if args.plot:
        _plot_csv(outdir / "delta_snr.csv")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twpakit",
        description="rf-SQUID TWPA design, simulation and calibration toolkit",
        epilog="Config schema (INI, SI base units): "
               + "; ".join(f"[{s}] " + ",".join(v["required"] + v["optional"])
                           for s, v in _SCHEMA.items())
               + ". Built-in configs: paper_defaults, desk_defaults.")
    parser.add_argument("--config", default="paper_defaults",
                        help="config file path or built-in name")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--plot", action="store_true",
                        help="emit an SVG chart per output CSV")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("design", help="dispersion, stopbands and linear S21")
    sub.add_parser("gain", help="analytic 3WM gain profile and P1dB")
    p_sim = sub.add_parser("simulate",
                           help="time-domain chain: conversion gains, sideband "
                                "noise, phase-sensitive scan")
    p_sim.add_argument("--phase-points", type=int, default=8)
    p_s21 = sub.add_parser("fit-s21", help="fit cell inductance to S21 spectra")
    p_s21.add_argument("input", help="s21 CSV (freq_hz,s21_db,s21_phase_rad[,flux_phi0])")
    p_flux = sub.add_parser("fit-flux", help="fit rf-SQUID elements to L_cell(flux)")
    p_flux.add_argument("input", help="CSV with flux_phi0,l_cell_h")
    p_noise = sub.add_parser("fit-noise", help="Y-factor noise fit")
    p_noise.add_argument("input", help="noise CSV (freq_hz,temp_k,pout_dbm,rbw_hz)")
    p_noise.add_argument("--model", choices=["two-mode", "single-mode"],
                         default="two-mode")
    p_noise.add_argument("--eta1", type=float, default=1.0)
    p_noise.add_argument("--gain-ratio-db", type=float, default=0.0)
    p_cal = sub.add_parser("calibrate", help="input-line insertion loss")
    p_cal.add_argument("g2", help="CSV with freq_hz,g2_db")
    p_cal.add_argument("roundtrip", help="CSV with freq_hz,s21_roundtrip_db")
    p_snr = sub.add_parser("snr", help="SNR-improvement table")
    p_snr.add_argument("input",
                       help="CSV with freq_hz,n_in_photons,eta_t,n2_photons,"
                            "n_t_photons,g_ss_db")
    return parser


_COMMANDS = {
    "design": cmd_design,
    "gain": cmd_gain,
    "simulate": cmd_simulate,
    "fit-s21": cmd_fit_s21,
    "fit-flux": cmd_fit_flux,
    "fit-noise": cmd_fit_noise,
    "calibrate": cmd_calibrate,
    "snr": cmd_snr,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)

    np.random.seed(args.seed)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        code = _COMMANDS[args.command](args, cfg, outdir)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except chain_model.FitConvergenceError as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except noise_calibration.NoiseFitError as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (timedomain_sim.SteadyStateError, timedomain_sim.InstabilityError,
            timedomain_sim.ProbeNonlinearityError,
            squid_core.HystereticRegimeError,
            squid_core.SingularOperatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    write_manifest(outdir, cfg, ["twpakit"] + argv, args.seed)
    return code


if __name__ == "__main__":
    sys.exit(main())
