import numpy as np
import pytest

from twpakit.chain_model import ChainSpec, build_pattern, ctm_s21, uniform_pattern
from twpakit.constants import PHI0_BAR
from twpakit.squid_core import FluxPoint, SquidParams, cell_inductance, solve_phi_dc
from twpakit.timedomain_sim import (
    ConversionGainResult,
    DriveSpec,
    InstabilityError,
    SimConfig,
    Tone,
    extract_impedance,
    sideband_excess_noise,
    sideband_frequency,
    sideband_labels,
    sim_config_for_pump,
    simulate_chain,
    simulate_unit_cell,
    tone_from_power,
)

FITTED = SquidParams(ic=0.93e-6, cj=50e-15, lm=58.6e-12, lj0l=8.9e-12,
                     lw=37e-12, rshunt=1e4)


def cell_config(f_probe, cycles=4, settle=12e-9, tol=1e-8):
    return SimConfig(record_time=cycles / f_probe, settle_time=settle,
                     ss_rel_tol=tol, max_windows=10)


def drive_for_flux(squid, phi0_units, tones=()):
    i_dc = 2 * np.pi * phi0_units * PHI0_BAR / squid.lm
    return DriveSpec(i_dc=i_dc, tones=tones)


class TestUnitCell:
    def test_dc_phase_matches_transcendental(self):
        # bias current ramped from zero must land on the analytic flux branch
        drive = drive_for_flux(FITTED, 0.25, (Tone(freq=5.5e9, amp=1e-10),))
        rec = simulate_unit_cell(FITTED, None, drive, cell_config(5.5e9, settle=16e-9))
        phi_ref = solve_phi_dc(2 * np.pi * 0.25, FITTED.beta_l)
        assert np.mean(rec.phi) == pytest.approx(phi_ref, abs=1e-9)

    def test_small_signal_inductance_vs_analytic(self):
        f = 5.5e9
        for flux in (0.1, 0.25, 0.4):
            drive = drive_for_flux(FITTED, flux, (Tone(freq=f, amp=5e-8),))
            rec = simulate_unit_cell(FITTED, None, drive, cell_config(f))
            imp = extract_impedance(rec, f, z_ref=52.0)
            phi_dc = solve_phi_dc(2 * np.pi * flux, FITTED.beta_l)
            l_ref = cell_inductance(FITTED, phi_dc)
            assert imp.l_cell == pytest.approx(l_ref, rel=0.01)

    def test_linear_inductor_limit(self):
        # negligible junction current: the cell reduces to lm + lw in series
        squid = SquidParams(ic=1e-12, cj=1e-15, lm=60e-12, lw=37e-12,
                            rshunt=None)
        f = 2e9
        cfg = SimConfig(record_time=4 / f, settle_time=6e-9, dt=2e-13,
                        ss_rel_tol=1e-8, max_windows=10)
        rec = simulate_unit_cell(squid, None,
                                 DriveSpec(tones=(Tone(freq=f, amp=1e-7),)), cfg)
        imp = extract_impedance(rec, f)
        assert imp.l_cell == pytest.approx(97e-12, rel=1e-6)
        assert abs(imp.r_cell) < 1e-9

    def test_integrator_order(self):
        f = 5.5e9
        drive = drive_for_flux(FITTED, 0.3, (Tone(freq=f, amp=2e-7),))
        base = SimConfig(record_time=4 / f, settle_time=12e-9, ss_rel_tol=1e-8,
                         max_windows=10)
        z1 = extract_impedance(simulate_unit_cell(FITTED, None, drive, base),
                               f, 52.0)
        fine = SimConfig(record_time=4 / f, settle_time=12e-9, ss_rel_tol=1e-8,
                         max_windows=10,
                         dt=0.5 / (200 * 3.6 * f))
        z2 = extract_impedance(simulate_unit_cell(FITTED, None, drive, fine),
                               f, 52.0)
        assert abs(abs(z1.z_cell) - abs(z2.z_cell)) / abs(z2.z_cell) < 1e-4

    def test_inductance_flat_at_magic_flux(self):
        # at cos(phi_dc) = -beta_l the rectified inductance shift cancels;
        # the cell inductance stays put up to strong drive
        f = 5.5e9
        phi_dc = np.arccos(-FITTED.beta_l)
        phi_ext = phi_dc + FITTED.beta_l * np.sin(phi_dc)
        lvals = []
        for amp in (5e-8, 2e-6, 6e-6):
            drive = drive_for_flux(FITTED, phi_ext / (2 * np.pi),
                                   (Tone(freq=f, amp=amp),))
            rec = simulate_unit_cell(FITTED, None, drive, cell_config(f))
            lvals.append(extract_impedance(rec, f, 52.0).l_cell)
        assert abs(lvals[-1] / lvals[0] - 1.0) < 0.02

    def test_inductance_rises_with_power_at_zero_flux(self):
        # at zero flux the Kerr coefficient is positive: driving the cell
        # softens the junction's contribution and the inductance grows
        f = 5.5e9
        lvals = []
        for amp in (5e-8, 4e-6, 8e-6):
            drive = DriveSpec(tones=(Tone(freq=f, amp=amp),))
            rec = simulate_unit_cell(FITTED, None, drive, cell_config(f))
            lvals.append(extract_impedance(rec, f, 52.0).l_cell)
        assert lvals[1] > lvals[0]
        assert lvals[2] > lvals[1]

    def test_incoherent_window_rejected(self):
        f = 5.5e9
        drive = drive_for_flux(FITTED, 0.25, (Tone(freq=f, amp=5e-8),))
        rec = simulate_unit_cell(FITTED, None, drive, cell_config(f))
        with pytest.raises(ValueError):
            extract_impedance(rec, f * 1.1)

    def test_power_tag(self):
        f = 5.5e9
        amp = 2e-7
        drive = drive_for_flux(FITTED, 0.25, (Tone(freq=f, amp=amp),))
        rec = simulate_unit_cell(FITTED, None, drive, cell_config(f))
        imp = extract_impedance(rec, f, z_ref=52.0)
        assert imp.drive_power_w == pytest.approx(0.5 * amp ** 2 * 52.0, rel=1e-6)


def desk_like_chain(n_cells=48, uniform=False, esr=True):
    ic = 0.8 * PHI0_BAR / 60e-12
    squid = SquidParams(ic=ic, cj=5e-15, lm=60e-12, lw=35.6e-12,
                        rshunt=1e4 if esr else None)
    phi_dc = 1.45
    flux = FluxPoint.from_phi_ext(phi_dc + squid.beta_l * np.sin(phi_dc),
                                  squid.beta_l)
    pattern = uniform_pattern(34.9e-15) if uniform else build_pattern(
        10.5e-15, 68.2e-15, 50.4e-15, group_len=2)
    return ChainSpec(n_cells=n_cells, pitch=10e-6, squid=squid, flux=flux,
                     pattern=pattern, z_term=48.7)


class TestChain:
    def test_linear_transmission_matches_ctm(self):
        chain = desk_like_chain(n_cells=48)
        cfg = sim_config_for_pump(37.45e9, settle_windows=3, ss_rel_tol=1e-5,
                                  max_windows=10, cap_esr=0.0,
                                  f_max_factor=1.5)
        fb = 1.0 / cfg.record_time
        probes = tuple(Tone(freq=n * fb, amp=2e-9) for n in (10, 16, 22, 28))
        run = simulate_chain(chain, DriveSpec(tones=probes), cfg)
        freqs = np.array([t.freq for t in run.tones])
        td = np.array([abs(run.wave(2, f, "b") / run.wave(1, f, "a"))
                       for f in freqs])
        ref = np.abs(ctm_s21(chain.l_cell(), chain.pattern, 48, 48.7, freqs))
        assert np.max(np.abs(20 * np.log10(td / ref))) < 0.2

    def test_energy_conservation_lossless(self):
        chain = desk_like_chain(n_cells=48, esr=False)
        cfg = sim_config_for_pump(37.45e9, settle_windows=4, ss_rel_tol=1e-6,
                                  max_windows=12, cap_esr=0.0,
                                  f_max_factor=1.5)
        fb = 1.0 / cfg.record_time
        tones = (Tone(freq=12 * fb, amp=5e-8), Tone(freq=20 * fb, amp=5e-8),
                 Tone(freq=9 * fb, amp=4e-8, port="output"))
        run = simulate_chain(chain, DriveSpec(tones=tones), cfg)
        p_in, p_out = run.power_balance()
        assert p_out == pytest.approx(p_in, rel=1e-6)

    def test_port_wave_decomposition(self):
        chain = desk_like_chain(n_cells=48)
        cfg = sim_config_for_pump(37.45e9, settle_windows=3, ss_rel_tol=1e-5,
                                  max_windows=10, cap_esr=0.4, f_max_factor=1.5)
        fb = 1.0 / cfg.record_time
        run = simulate_chain(chain,
                             DriveSpec(tones=(Tone(freq=16 * fb, amp=1e-7),)),
                             cfg)
        # v = sqrt(Z)(a+b) and i = (a-b)/sqrt(Z) reconstruct the port traces
        z = chain.z_term
        m = run.v0.size
        spec_v0 = np.fft.rfft(run.v0) / m * 2
        spec_i = np.fft.rfft(run.ib1) / m * 2
        rec_v = np.sqrt(z) * (run.a1 + run.b1)
        rec_i = (run.a1 - run.b1) / np.sqrt(z)
        assert np.allclose(rec_v[1:], spec_v0[1:], rtol=0, atol=1e-12)
        assert np.allclose(rec_i[1:], spec_i[1:], rtol=0, atol=1e-12)

    def test_determinism(self):
        chain = desk_like_chain(n_cells=48)
        cfg = sim_config_for_pump(37.45e9, settle_windows=3, ss_rel_tol=1e-4,
                                  max_windows=8, cap_esr=0.8, f_max_factor=1.5)
        fb = 1.0 / cfg.record_time
        drive = DriveSpec(tones=(Tone(freq=16 * fb, amp=1e-7),))
        a = simulate_chain(chain, drive, cfg)
        b = simulate_chain(chain, drive, cfg)
        assert np.array_equal(a.vn, b.vn)
        assert np.array_equal(a.b2, b.b2)

    def test_instability_names_cell(self):
        chain = desk_like_chain(n_cells=48)
        cfg = sim_config_for_pump(37.45e9, settle_windows=3, ss_rel_tol=1e-4,
                                  max_windows=8, cap_esr=0.8, f_max_factor=1.5)
        fb = 1.0 / cfg.record_time
        with pytest.raises(InstabilityError, match="cell"):
            simulate_chain(chain,
                           DriveSpec(tones=(Tone(freq=16 * fb, amp=1.0),)),
                           cfg)

    def test_flux_via_idc_rejected_for_chain(self):
        chain = desk_like_chain(n_cells=48)
        cfg = sim_config_for_pump(37.45e9, f_max_factor=1.5)
        with pytest.raises(ValueError):
            simulate_chain(chain, DriveSpec(i_dc=1e-6), cfg)

    def test_tone_snapping(self):
        chain = desk_like_chain(n_cells=48)
        cfg = sim_config_for_pump(37.45e9, settle_windows=2, ss_rel_tol=1e-2,
                                  max_windows=6, cap_esr=0.8, f_max_factor=1.5)
        fb = 1.0 / cfg.record_time
        run = simulate_chain(chain,
                             DriveSpec(tones=(Tone(freq=16.2 * fb, amp=1e-8),)),
                             cfg)
        assert run.tones[0].freq == pytest.approx(16 * fb, rel=1e-12)

    def test_node_waveform_dump(self):
        chain = desk_like_chain(n_cells=48)
        cfg = sim_config_for_pump(37.45e9, settle_windows=2, ss_rel_tol=1e-2,
                                  max_windows=6, cap_esr=0.8, f_max_factor=1.5)
        fb = 1.0 / cfg.record_time
        run = simulate_chain(chain,
                             DriveSpec(tones=(Tone(freq=16 * fb, amp=1e-8),)),
                             cfg, record_nodes=True)
        assert run.node_v is not None
        assert run.node_v.shape[1] == 48
        assert np.all(np.isfinite(run.node_v))


class TestSidebandBookkeeping:
    def test_labels(self):
        assert sideband_labels(1) == ["s", "i", "p+s"]
        assert sideband_labels(3) == ["s", "i", "p+s", "p+i", "2p+s",
                                      "2p+i", "3p+s"]

    def test_frequencies(self):
        f_p, f_s = 12e9, 5e9
        assert sideband_frequency("s", f_p, f_s) == 5e9
        assert sideband_frequency("i", f_p, f_s) == 7e9
        assert sideband_frequency("p+s", f_p, f_s) == 17e9
        assert sideband_frequency("p+i", f_p, f_s) == 19e9
        assert sideband_frequency("2p+s", f_p, f_s) == 29e9
        assert sideband_frequency("2p+i", f_p, f_s) == 31e9
        assert sideband_frequency("3p+s", f_p, f_s) == 41e9

    def make_result(self, fwd, bwd):
        labels = sideband_labels(2)
        freqs = {lab: sideband_frequency(lab, 12e9, 5e9) for lab in labels}
        return ConversionGainResult(f_p=12e9, f_s=5e9, labels=labels,
                                    freqs=freqs, forward=fwd, backward=bwd)

    def test_zero_sidebands(self):
        labels = sideband_labels(2)
        res = self.make_result({lab: (100.0 if lab in ("s", "i") else 0.0)
                                for lab in labels},
                               {lab: 0.0 for lab in labels})
        assert sideband_excess_noise(res) == 0.0

    def test_two_sidebands_at_minus_13_dbc(self):
        labels = sideband_labels(2)
        g_ss = 100.0
        ratio = 10 ** (-13.0 / 10.0)
        fwd = {lab: 0.0 for lab in labels}
        fwd["s"] = g_ss
        fwd["i"] = g_ss
        fwd["p+s"] = ratio * g_ss
        fwd["p+i"] = ratio * g_ss
        res = self.make_result(fwd, {lab: 0.0 for lab in labels})
        assert sideband_excess_noise(res) == pytest.approx(ratio, rel=1e-12)

    def test_missing_entries_rejected(self):
        labels = sideband_labels(2)
        fwd = {lab: 1.0 for lab in labels}
        del fwd["2p+s"]
        fwd["s"] = 100.0
        res = self.make_result(fwd, {lab: 0.0 for lab in labels})
        with pytest.raises(ValueError):
            sideband_excess_noise(res)


class TestToneHelpers:
    def test_tone_from_power(self):
        t = tone_from_power(6e9, 1e-9, 50.0)
        # incident power = amp^2 * z / 8
        assert t.amp ** 2 * 50.0 / 8.0 == pytest.approx(1e-9, rel=1e-12)

    def test_tone_validation(self):
        with pytest.raises(ValueError):
            Tone(freq=-1e9, amp=1e-9)
        with pytest.raises(ValueError):
            Tone(freq=1e9, amp=1e-9, port="middle")
