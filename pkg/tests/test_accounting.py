import math
import random

import pytest

from fkgelab.accounting import (
    AccountingError,
    GradientEvent,
    PrivacyLedger,
    RdpCurve,
    SelectionEvent,
    check_budget,
    compose,
    export_ledger,
    rdp_gaussian_subsampled,
    rdp_selection_base,
    rdp_selection_subsampled,
    to_dp,
)


class TestGradientCurve:
    def test_pinned_value(self):
        # 2 q^2 alpha / sigma at q=0.01, sigma=1, alpha=2
        eps, valid = rdp_gaussian_subsampled(0.01, 1.0, 2.0)
        assert eps == 4.0e-4
        assert valid

    def test_sigma_squared_variant(self):
        eps, _ = rdp_gaussian_subsampled(0.01, 2.0, 2.0, denominator="sigma2")
        assert eps == pytest.approx(2 * 0.01**2 * 2 / 4.0)

    def test_validity_shrinks_with_order(self):
        flags = [rdp_gaussian_subsampled(0.01, 1.0, a)[1] for a in (2.0, 8.0, 1024.0)]
        assert flags[0] and not flags[-1]

    def test_domain(self):
        with pytest.raises(ValueError):
            rdp_gaussian_subsampled(0.0, 1.0, 2.0)
        with pytest.raises(ValueError):
            rdp_gaussian_subsampled(0.1, -1.0, 2.0)


class TestSelectionCurve:
    def test_base_curve(self):
        assert rdp_selection_base(1.0, 1.0, 2.0) == pytest.approx(0.25 + 1.0)

    def test_pinned_subsampled_value(self):
        # log(1 + 0.01 * min{4(e^1.25 - 1), 2 e^1.25}) = log(1.0698069...)
        got = rdp_selection_subsampled(0.1, 1.0, 1.0, 2)
        assert got == pytest.approx(0.0674781, abs=1e-6)

    def test_against_direct_oracle(self):
        # independent evaluation of the alpha = 2 bound in plain arithmetic:
        # log(1 + q^2 * min{4(e^eps2 - 1), 2 e^eps2})
        q, eps2 = 0.1, 1.25
        expected = math.log(1 + q**2 * min(4 * (math.exp(eps2) - 1),
                                           2 * math.exp(eps2)))
        assert rdp_selection_subsampled(q, 1.0, 1.0, 2) == pytest.approx(
            expected, abs=1e-12)

    def test_zero_rate_is_free(self):
        assert rdp_selection_subsampled(0.0, 1.0, 1.0, 4) == 0.0

    def test_integer_orders_only(self):
        with pytest.raises(ValueError):
            rdp_selection_subsampled(0.1, 1.0, 1.0, 1)
        eps, valid = SelectionEvent(0.1, 1.0, 1.0, 1e-4).eps_at(2.5)
        assert not valid


class TestConversion:
    def test_pinned_single_point(self):
        curve = RdpCurve(alphas=(2.0,), eps=(1.0,))
        eps, delta_total = to_dp(curve, math.exp(-1.0))
        assert eps == pytest.approx(2.0)
        assert delta_total == pytest.approx(math.exp(-1.0))

    def test_picks_best_order(self):
        curve = RdpCurve(alphas=(2.0, 32.0), eps=(0.1, 0.1))
        eps, _ = to_dp(curve, 1e-5)
        assert eps == pytest.approx(0.1 + math.log(1e5) / 31.0)

    def test_delta_hat_added(self):
        curve = RdpCurve(alphas=(2.0,), eps=(1.0,), delta_hat=0.25)
        _, delta_total = to_dp(curve, 0.1)
        assert delta_total == pytest.approx(0.35)


class TestComposition:
    def events(self):
        evs = [GradientEvent(q=0.01, sigma=1.0) for _ in range(50)]
        evs += [SelectionEvent(q=0.01, sigma_r=1.0, sigma_p=1.0, delta_t=1e-4)
                for _ in range(50)]
        return evs

    def test_order_independence_over_shuffles(self):
        evs = self.events()
        curves = []
        for seed in range(3):
            shuffled = evs[:]
            random.Random(seed).shuffle(shuffled)
            ledger = PrivacyLedger.empty()
            for e in shuffled:
                ledger = compose(ledger, e)
            curves.append(ledger.curve)
        ref = curves[0]
        for c in curves[1:]:
            assert c.alphas == ref.alphas
            assert all(a == pytest.approx(b, rel=1e-12)
                       for a, b in zip(c.eps, ref.eps))
            assert c.delta_hat == pytest.approx(ref.delta_hat)

    def test_additivity(self):
        evs = self.events()
        ledger = PrivacyLedger.empty()
        for e in evs:
            ledger = compose(ledger, e)
        for a, eps in zip(ledger.curve.alphas, ledger.curve.eps):
            expected = sum(e.eps_at(a)[0] for e in evs)
            assert eps == pytest.approx(expected, rel=1e-12)
        assert ledger.curve.delta_hat == pytest.approx(50 * 1e-4)
        assert ledger.n_events == 100

    def test_invalid_orders_dropped(self):
        ledger = PrivacyLedger.empty()
        ledger = ledger.record(GradientEvent(q=0.01, sigma=1.0))
        assert 1024.0 not in ledger.curve.alphas
        assert 2.0 in ledger.curve.alphas

    def test_exhausting_the_grid_raises(self):
        ledger = PrivacyLedger.empty(alphas=(1024.0,))
        with pytest.raises(AccountingError):
            ledger.record(GradientEvent(q=0.01, sigma=1.0))


class TestBudget:
    def test_empty_within(self):
        assert check_budget(PrivacyLedger.empty(), 1e-6, 1e-5) == "within"

    def test_epsilon_exhaustion(self):
        ledger = PrivacyLedger.empty().record(GradientEvent(q=0.01, sigma=1.0))
        assert check_budget(ledger, 1e-6, 1e-5) == "exhausted"
        assert check_budget(ledger, 100.0, 1e-5) == "within"

    def test_delta_exhaustion(self):
        ledger = PrivacyLedger.empty()
        ev = SelectionEvent(q=0.01, sigma_r=1.0, sigma_p=1.0, delta_t=0.5)
        ledger = ledger.record(ev).record(ev)
        assert check_budget(ledger, 1e6, 1e-5) == "exhausted"

    def test_export_contains_summary(self):
        ledger = PrivacyLedger.empty().record(GradientEvent(q=0.01, sigma=1.0))
        text = export_ledger(ledger, 1e-5)
        assert "epsilon = " in text and "delta_total = " in text
        assert "events = 1" in text
