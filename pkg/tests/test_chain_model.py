import numpy as np
import pytest

from twpakit.chain_model import (
    CapacitancePattern,
    ChainSpec,
    FitConvergenceError,
    S21Spectrum,
    bloch_dispersion,
    bloch_dispersion_lc,
    build_pattern,
    ctm_s21,
    ctm_s21_cells,
    fit_cell_inductance,
    fit_flux_model,
    phase_mismatch,
    s21_spectrum,
    uniform_pattern,
)
from twpakit.constants import PHI0_BAR
from twpakit.squid_core import FluxPoint, SquidParams, cell_inductance, line_parameters

from oracles import lc_line_wavenumber

C1, C2, C3 = 10.5e-15, 68.2e-15, 50.4e-15


def paper_chain(n_cells=2393, z_term=50.0, flux_phi0=0.33):
    squid = SquidParams(ic=0.9e-6, lm=60e-12, lw=37e-12)
    flux = FluxPoint.from_phi0_units(flux_phi0, squid.beta_l)
    return ChainSpec(n_cells=n_cells, pitch=10e-6, squid=squid, flux=flux,
                     pattern=build_pattern(C1, C2, C3), z_term=z_term)


class TestPattern:
    def test_default_period(self):
        pat = build_pattern(C1, C2, C3, group_len=6)
        assert pat.period == 24
        assert len(pat.cell_values()) == 24

    def test_mean_capacitance(self):
        pat = build_pattern(C1, C2, C3)
        assert pat.mean == pytest.approx((12 * C1 + 6 * C2 + 6 * C3) / 24,
                                         rel=1e-14)
        assert pat.mean == pytest.approx(34.9e-15, rel=1e-3)

    def test_uniform(self):
        pat = uniform_pattern(36e-15)
        assert pat.period == 1
        assert pat.mean == 36e-15

    def test_empty_ordering_rejected(self):
        with pytest.raises(ValueError):
            build_pattern(C1, C2, C3, ordering=())

    def test_unknown_label_rejected(self):
        with pytest.raises(ValueError):
            build_pattern(C1, C2, C3, ordering=("c1", "c4"))

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            CapacitancePattern(values=(1e-15, 0.0), group_len=2)


class TestCtm:
    def test_empty_cascade(self):
        s21 = ctm_s21(95e-12, build_pattern(C1, C2, C3), 0, 50.0,
                      np.array([1e9, 5e9]))
        assert np.allclose(s21, 1.0, atol=1e-14)

    def test_matched_uniform_low_frequency(self):
        l_cell = 95.6e-12
        c = 34.9e-15
        z0 = np.sqrt(l_cell / c)
        s21 = ctm_s21(l_cell, uniform_pattern(c), 500, z0, np.array([1e7]))
        assert abs(abs(s21[0]) - 1.0) < 1e-9

    def test_lossless_unitarity(self):
        chain = paper_chain(n_cells=240)
        freq = np.linspace(1e9, 9e9, 40)
        s11, s21 = ctm_s21(chain.l_cell(), chain.pattern, 240, 51.5, freq,
                           with_s11=True)
        assert np.max(np.abs(np.abs(s11) ** 2 + np.abs(s21) ** 2 - 1.0)) < 1e-9

    def test_passivity_with_mismatch(self):
        chain = paper_chain(n_cells=240)
        for z in (30.0, 75.0):
            s21 = ctm_s21(chain.l_cell(), chain.pattern, 240, z,
                          np.linspace(1e9, 15e9, 200))
            assert np.max(np.abs(s21)) <= 1.0 + 1e-9

    def test_deep_stopband_no_overflow(self):
        # 2393 cells in a stopband: matrix entries grow like exp(alpha*N)
        chain = paper_chain()
        s21 = ctm_s21(chain.l_cell(), chain.pattern, 2393, 50.0,
                      np.array([11.0e9]))
        assert np.isfinite(np.abs(s21[0]))
        assert abs(s21[0]) < 1e-6

    def test_per_cell_variant_matches_periodic(self):
        chain = paper_chain(n_cells=96)
        freq = np.linspace(2e9, 14e9, 60)
        a = ctm_s21(chain.l_cell(), chain.pattern, 96, 50.0, freq)
        caps = np.resize(chain.pattern.cell_values(), 96)
        b = ctm_s21_cells(chain.l_cell(), caps, 50.0, freq)
        assert np.max(np.abs(a - b)) < 1e-10

    def test_spectrum_flags_validity(self):
        chain = paper_chain(n_cells=48)
        spec = s21_spectrum(chain, np.array([5e9, 200e9]))
        assert spec.valid[0]
        assert not spec.valid[1]


class TestBlochDispersion:
    def test_uniform_line_textbook_limit(self):
        l_cell, c = 100e-12, 34.9e-15
        freq = np.linspace(0.1e9, 25e9, 60)
        disp = bloch_dispersion_lc(l_cell, uniform_pattern(c), freq)
        ref = lc_line_wavenumber(freq, l_cell, c)
        assert np.max(np.abs(disp.k_bloch.real - ref)) < 1e-12
        assert disp.stopbands == []

    def test_paper_first_stopband(self):
        chain = paper_chain()
        disp = bloch_dispersion(chain, np.linspace(1e9, 40e9, 4000))
        lo, hi = disp.stopbands[0]
        # designed stopband overlaps the measured 10.2-12 GHz dip
        assert lo < 12.0e9 and hi > 10.2e9

    def test_second_stopband_exists(self):
        chain = paper_chain()
        disp = bloch_dispersion(chain, np.linspace(1e9, 40e9, 4000))
        assert len(disp.stopbands) >= 2
        assert disp.stopbands[1][0] > disp.stopbands[0][1]
        assert disp.stopbands[1][0] < chain.cutoff_frequency()

    def test_low_frequency_matches_linear(self):
        chain = paper_chain()
        disp = bloch_dispersion(chain, np.linspace(0.05e9, 40e9, 4000))
        f_lo = disp.stopbands[0][0]
        sel = (disp.freq > 0.02 * f_lo) & (disp.freq < 0.1 * f_lo)
        k_lin = line_parameters(chain.l_cell(), chain.pattern.mean,
                                chain.pitch, disp.freq[sel]).k_lin_per_cell
        rel = np.abs(disp.k_bloch.real[sel] - k_lin) / k_lin
        assert np.max(rel) < 0.01

    def test_monotone_real_part(self):
        chain = paper_chain()
        disp = bloch_dispersion(chain, np.linspace(1e9, 40e9, 3000))
        assert np.all(np.diff(disp.k_bloch.real) > -1e-12)

    def test_evanescent_inside_stopband(self):
        chain = paper_chain()
        disp = bloch_dispersion(chain, np.linspace(1e9, 40e9, 3000))
        lo, hi = disp.stopbands[0]
        mid = 0.5 * (lo + hi)
        assert disp.k_at(mid).imag > 0.0
        assert disp.in_stopband(mid)

    def test_edges_match_finite_chain_dip(self):
        # a 10-super-period chain resolves band edges to its fringe spacing
        chain = paper_chain(n_cells=240)
        grid = np.linspace(8e9, 16e9, 1601)
        disp = bloch_dispersion(chain, grid)
        lo, hi = disp.stopbands[0]
        z_img = np.sqrt(chain.l_cell() / chain.pattern.mean)
        s21 = ctm_s21(chain.l_cell(), chain.pattern, 240, z_img, grid)
        db = 20 * np.log10(np.abs(s21) + 1e-300)
        i = np.argmin(np.abs(grid - 0.5 * (lo + hi)))
        j = i
        while db[i] < -3.0:
            i -= 1
        while db[j] < -3.0:
            j += 1
        fringe = 1.0 / (2 * 240 * np.sqrt(chain.l_cell() * chain.pattern.mean))
        assert abs(grid[i] - lo) < 0.5 * fringe
        assert abs(grid[j] - hi) < 0.5 * fringe


class TestPhaseMismatch:
    def test_linear_line_is_matched(self):
        # a uniform line far below cutoff has k proportional to f
        disp = bloch_dispersion_lc(95e-12, uniform_pattern(35e-15),
                                   np.linspace(0.1e9, 26e9, 2000))
        pm = phase_mismatch(disp, 12e9, 6e9, "3wm")
        assert abs(pm.delta_k_per_cell) < 2e-4
        assert not pm.evanescent

    def test_pump_above_stopband_phase_matched(self):
        chain = paper_chain()
        disp = bloch_dispersion(chain, np.linspace(0.2e9, 45e9, 9000))
        hi = disp.stopbands[0][1]
        # somewhere just above the first stopband the 3WM mismatch crosses zero
        dks = [phase_mismatch(disp, f_p, f_p / 2, "3wm").delta_k_per_cell
               for f_p in np.linspace(hi * 1.01, hi * 1.15, 30)]
        assert min(np.abs(dks)) * chain.n_cells < np.pi
        assert np.sign(dks[0]) != np.sign(dks[-1])

    def test_shg_into_second_stopband_flagged(self):
        chain = paper_chain()
        disp = bloch_dispersion(chain, np.linspace(0.2e9, 45e9, 9000))
        f_p = disp.stopbands[0][1] * 1.02
        assert disp.in_stopband(2 * f_p)
        pm = phase_mismatch(disp, f_p, f_p / 2, "shg")
        assert pm.evanescent
        assert pm.im_k_per_cell["2p"] > 0.0

    def test_up_conversion_definition(self):
        disp = bloch_dispersion_lc(95e-12, uniform_pattern(35e-15),
                                   np.linspace(0.1e9, 30e9, 2000))
        pm = phase_mismatch(disp, 12e9, 6e9, "up_conversion")
        k = disp.k_at
        expect = (k(18e9) - k(12e9) - k(6e9)).real
        assert pm.delta_k_per_cell == pytest.approx(expect, rel=1e-12)

    def test_3wm_requires_fs_below_fp(self):
        disp = bloch_dispersion_lc(95e-12, uniform_pattern(35e-15),
                                   np.linspace(0.1e9, 30e9, 500))
        with pytest.raises(ValueError):
            phase_mismatch(disp, 6e9, 12e9, "3wm")


class TestFitCellInductance:
    def make_spectrum(self, l_cell, flux=0.3, n_cells=2393, noise=0.0, rng=None):
        pat = build_pattern(C1, C2, C3)
        freq = np.linspace(9e9, 13.5e9, 351)
        s21 = ctm_s21(l_cell, pat, n_cells, 50.0, freq)
        if noise:
            s21 = s21 * (1 + noise * rng.standard_normal(freq.size))
        return S21Spectrum(freq=freq, s21=s21, flux_phi0=flux)

    def test_round_trip(self):
        template = paper_chain()
        spec = self.make_spectrum(95.6e-12)
        fit = fit_cell_inductance([spec], template)[0]
        assert fit.error is None
        assert fit.l_cell == pytest.approx(95.6e-12, rel=1e-3)

    def test_round_trip_several_flux_points(self):
        template = paper_chain()
        truths = [90e-12, 95.6e-12, 102e-12, 110e-12]
        specs = [self.make_spectrum(l, flux=i * 0.1)
                 for i, l in enumerate(truths)]
        fits = fit_cell_inductance(specs, template)
        for fit, l_true in zip(fits, truths):
            assert fit.error is None
            assert fit.l_cell == pytest.approx(l_true, rel=1e-3)

    def test_flat_spectrum_unidentifiable(self):
        template = paper_chain()
        freq = np.linspace(2e9, 5e9, 200)  # window far below the stopband
        s21 = ctm_s21(95.6e-12, template.pattern, 2393, 50.0, freq)
        fit = fit_cell_inductance(
            [S21Spectrum(freq=freq, s21=s21, flux_phi0=0.3)], template)[0]
        assert fit.error is not None
        assert fit.l_cell is None

    def test_background_is_removed(self):
        # a smooth multiplicative background (cable-like ripple trend) must
        # not bias the fit
        template = paper_chain()
        spec = self.make_spectrum(98e-12)
        fn = np.linspace(-1, 1, spec.freq.size)
        spec.s21 = spec.s21 * 10 ** ((1.5 + 0.8 * fn + 0.5 * fn ** 2) / 20)
        fit = fit_cell_inductance([spec], template)[0]
        assert fit.l_cell == pytest.approx(98e-12, rel=2e-3)


class TestFitFluxModel:
    TRUE = dict(ic=0.93e-6, lm=58.6e-12, lw=37.0e-12)

    def synth(self, noise=0.0, rng=None, n_points=25):
        ic, lm, lw = self.TRUE["ic"], self.TRUE["lm"], self.TRUE["lw"]
        lps = PHI0_BAR / (40.0 * ic)
        squid = SquidParams(ic=ic, lm=lm, lj0l=lps, lw=lw)
        flux = np.linspace(0.0, 0.55, n_points)
        l_cell = np.array([
            cell_inductance(squid,
                            FluxPoint.from_phi0_units(phi, squid.beta_l).phi_dc)
            for phi in flux])
        if noise:
            l_cell = l_cell * (1 + noise * rng.standard_normal(l_cell.size))
        return np.column_stack([flux, l_cell])

    def test_round_trip(self):
        fit = fit_flux_model(self.synth())
        assert fit.ic == pytest.approx(self.TRUE["ic"], rel=0.01)
        assert fit.lm == pytest.approx(self.TRUE["lm"], rel=0.01)
        assert fit.lw == pytest.approx(self.TRUE["lw"], rel=0.01)
        assert fit.l_parasitic == pytest.approx(8.85e-12, rel=0.02)

    def test_monte_carlo_ic_within_5_percent(self):
        # with all three elements free the model has a sloppy direction that
        # amplifies 1% data noise ~30x; a layout-known wire inductance
        # conditions the problem
        rng = np.random.default_rng(5)
        errs = []
        for _ in range(100):
            fit = fit_flux_model(self.synth(noise=0.01, rng=rng),
                                 lw=self.TRUE["lw"])
            errs.append(abs(fit.ic / self.TRUE["ic"] - 1.0))
        assert np.percentile(errs, 95) < 0.05
        assert np.median(errs) < 0.02

    def test_degenerate_data_rejected(self):
        pts = np.column_stack([np.linspace(0, 0.6, 20), np.full(20, 95e-12)])
        with pytest.raises(FitConvergenceError):
            fit_flux_model(pts)

    def test_needs_flux_span(self):
        pts = self.synth()[:10]
        pts[:, 0] *= 0.5  # squeeze span below half a flux quantum
        with pytest.raises(ValueError):
            fit_flux_model(pts[:8])


class TestChainSpecTaper:
    def test_taper_caps_blend_to_mean(self):
        chain = paper_chain(n_cells=96)
        chain.taper_cells = 24
        caps = chain.cell_caps()
        mean = chain.pattern.mean
        # first cell nearly averaged, body untouched
        assert abs(caps[0] - mean) < 0.1 * abs(
            chain.pattern.cell_values()[0] - mean) + 1e-18
        body = np.resize(chain.pattern.cell_values(), 96)[30:60]
        assert np.allclose(caps[30:60], body)

    def test_taper_bounds(self):
        with pytest.raises(ValueError):
            ChainSpec(n_cells=10, pitch=1e-5,
                      squid=SquidParams(ic=1e-6), flux=FluxPoint(0.0, 0.0),
                      pattern=uniform_pattern(30e-15), taper_cells=6)
