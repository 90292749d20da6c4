import numpy as np
import pytest

from climcred import (
    AmortizingProfile,
    ExplicitProfile,
    Loan,
    Portfolio,
    ValidationError,
    aggregate_ead,
    build_partition,
    ead_amortizing,
    herfindahl,
    load_portfolio,
)
from climcred.errors import InputFormatError

# mpmath, 40 digits: 100*((1.05^10 - 1.05^5) / (1.05^10 - 1))
EAD_100_10_5PCT_T5 = 56.06870360529048


def test_ead_amortizing_endpoints():
    assert ead_amortizing(100.0, 10, 0.05, 0) == 100.0
    assert ead_amortizing(100.0, 10, 0.05, 10) == 0.0
    assert ead_amortizing(100.0, 10, 0.05, 11) == 0.0


def test_ead_amortizing_closed_form_value():
    assert ead_amortizing(100.0, 10, 0.05, 5) == pytest.approx(EAD_100_10_5PCT_T5, abs=1e-10)


def test_ead_amortizing_zero_rate_is_linear():
    for t in range(11):
        assert ead_amortizing(100.0, 10, 0.0, t) == pytest.approx(100.0 * (10 - t) / 10)


def test_ead_amortizing_continuous_in_rate_at_zero():
    for t in (0, 3, 7, 10):
        lim = ead_amortizing(100.0, 10, 1e-9, t)
        assert lim == pytest.approx(ead_amortizing(100.0, 10, 0.0, t), rel=1e-6)


def test_ead_amortizing_non_increasing():
    for rate in (-0.01, 0.0, 0.03, 0.2):
        vals = [ead_amortizing(250.0, 12, rate, t) for t in range(14)]
        assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))


def test_ead_amortizing_preconditions():
    with pytest.raises(ValidationError):
        ead_amortizing(-1.0, 10, 0.05, 0)
    with pytest.raises(ValidationError):
        ead_amortizing(100.0, 0, 0.05, 0)
    with pytest.raises(ValidationError):
        ead_amortizing(100.0, 10, -1.0, 0)
    with pytest.raises(ValidationError):
        ead_amortizing(100.0, 10, 0.05, -1)


def _flat_loan(lid, group, rating, amount, horizon):
    return Loan(
        id=lid, group=group, initial_rating=rating,
        profile=ExplicitProfile(values=np.full(horizon + 1, float(amount))),
    )


def test_aggregate_singleton_and_additivity():
    p = Portfolio(loans=(_flat_loan("a", "G1", 1, 100, 3),), horizon=3, num_ratings=3)
    agg = aggregate_ead(p)
    assert np.all(agg.values[0, 0] == 100.0)
    assert np.all(agg.values[0, 1] == 0.0)

    p2 = Portfolio(
        loans=(_flat_loan("a", "G1", 1, 100, 3), _flat_loan("b", "G1", 1, 100, 3)),
        horizon=3, num_ratings=3,
    )
    assert np.all(aggregate_ead(p2).values[0, 0] == 200.0)


def test_aggregate_matches_per_loan_loop():
    loans = (
        Loan("a", "G1", 1, AmortizingProfile(100.0, 5, 0.04)),
        Loan("b", "G2", 2, AmortizingProfile(50.0, 8, 0.0)),
        Loan("c", "G1", 2, ExplicitProfile(np.array([30.0, 20.0, 10.0]))),
    )
    p = Portfolio(loans=loans, horizon=4, num_ratings=4)
    agg = aggregate_ead(p)
    # brute-force oracle: one cell at a time
    gidx = p.group_index
    expected = np.zeros((2, 3, 5))
    for ln in loans:
        for t in range(5):
            expected[gidx[ln.group], ln.initial_rating - 1, t] += ln.profile.ead(t)
    assert np.allclose(agg.values, expected, rtol=0, atol=0)


def test_aggregate_is_linear_in_the_portfolio():
    rng = np.random.default_rng(3)
    mk = lambda lid, g, r: Loan(
        lid, g, r, ExplicitProfile(rng.uniform(0, 50, size=4))
    )
    a = [mk(f"a{i}", "G1", 1 + i % 2, ) for i in range(4)]
    b = [mk(f"b{i}", "G2", 1, ) for i in range(3)]
    pa = Portfolio(loans=tuple(a), horizon=3, num_ratings=3, groups=("G1", "G2"))
    pb = Portfolio(loans=tuple(b), horizon=3, num_ratings=3, groups=("G1", "G2"))
    pu = Portfolio(loans=tuple(a + b), horizon=3, num_ratings=3, groups=("G1", "G2"))
    assert np.allclose(
        aggregate_ead(pu).values, aggregate_ead(pa).values + aggregate_ead(pb).values
    )


def test_herfindahl_values():
    equal = Portfolio(
        loans=tuple(_flat_loan(f"l{i}", "G1", 1, 10, 2) for i in range(8)),
        horizon=2, num_ratings=3,
    )
    assert herfindahl(equal, 1) == pytest.approx(1 / 8, abs=1e-15)

    single = Portfolio(loans=(_flat_loan("l", "G1", 1, 7, 2),), horizon=2, num_ratings=3)
    assert herfindahl(single, 1) == 1.0

    mixed = Portfolio(
        loans=tuple(_flat_loan(f"l{i}", "G1", 1, amt, 2) for i, amt in enumerate((1, 2, 3))),
        horizon=2, num_ratings=3,
    )
    assert herfindahl(mixed, 1) == pytest.approx(14 / 36, abs=1e-15)


def test_herfindahl_scale_invariance_and_degenerate():
    rng = np.random.default_rng(11)
    amounts = rng.uniform(1, 9, size=6)
    p1 = Portfolio(
        loans=tuple(_flat_loan(f"l{i}", "G1", 1, a, 2) for i, a in enumerate(amounts)),
        horizon=2, num_ratings=3,
    )
    p2 = Portfolio(
        loans=tuple(_flat_loan(f"l{i}", "G1", 1, 3.7 * a, 2) for i, a in enumerate(amounts)),
        horizon=2, num_ratings=3,
    )
    assert herfindahl(p1, 1) == pytest.approx(herfindahl(p2, 1), rel=1e-12)

    dead = Portfolio(loans=(_flat_loan("l", "G1", 1, 0, 2),), horizon=2, num_ratings=3)
    with pytest.raises(ValidationError):
        herfindahl(dead, 1)


def test_portfolio_invariants():
    with pytest.raises(ValidationError):
        Portfolio(loans=(_flat_loan("a", "G1", 3, 1, 2),), horizon=2, num_ratings=3)
    with pytest.raises(ValidationError):
        Portfolio(
            loans=(_flat_loan("a", "G9", 1, 1, 2),), horizon=2, num_ratings=3, groups=("G1",)
        )


def test_partition_by_tag_requires_tags():
    p = Portfolio(loans=(_flat_loan("a", "G1", 1, 10, 2),), horizon=2, num_ratings=3)
    with pytest.raises(ValidationError):
        build_partition(p, key="tag")


def test_partition_covers_exposure():
    loans = (
        Loan("a", "G1", 1, ExplicitProfile(np.array([10.0, 8.0, 6.0])), tag="alpha"),
        Loan("b", "G1", 1, ExplicitProfile(np.array([5.0, 5.0, 5.0])), tag="beta"),
        Loan("c", "G2", 2, ExplicitProfile(np.array([7.0, 7.0, 0.0])), tag="alpha"),
    )
    p = Portfolio(loans=loans, horizon=2, num_ratings=3)
    agg = aggregate_ead(p)
    for key, expected_p in (("group_rating", 2), ("tag", 2)):
        part = build_partition(p, key=key)
        assert part.size == expected_p
        covered = np.zeros_like(agg.values[:, :, 1:])
        for g in range(2):
            for i in range(2):
                for s in range(part.counts[g, i]):
                    covered[g, i] += part.ead[g, i, s]
        assert np.allclose(covered, agg.values[:, :, 1:])
        assert part.principals.sum() == pytest.approx(agg.total(0))


def test_load_portfolio_amortizing_and_explicit(tmp_path):
    amort = tmp_path / "amort.csv"
    amort.write_text(
        "id,group,rating,principal,maturity,rate\n"
        "l1,G1,1,100,10,0.05\n"
        "l2,G2,2,50,3,0.0\n"
    )
    p = load_portfolio(amort, horizon=4, num_ratings=4)
    assert len(p.loans) == 2
    assert p.loans[0].profile.ead(5) == pytest.approx(EAD_100_10_5PCT_T5, abs=1e-10)

    explicit = tmp_path / "explicit.csv"
    explicit.write_text(
        "id,group,rating,tag,ead_0,ead_1,ead_2\n"
        "l1,G1,1,book-a,10,8,6\n"
        "l2,G1,2,book-b,5,5,5\n"
    )
    p = load_portfolio(explicit, horizon=2, num_ratings=3)
    assert p.loans[0].tag == "book-a"
    assert p.loans[1].profile.ead(2) == 5.0


def test_load_portfolio_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,group,rating,principal,maturity,rate,shoe_size\nl1,G1,1,1,1,0,44\n")
    with pytest.raises(InputFormatError):
        load_portfolio(bad, horizon=2, num_ratings=3)

    gap = tmp_path / "gap.csv"
    gap.write_text("id,group,rating,ead_0,ead_2\nl1,G1,1,1,1\n")
    with pytest.raises(InputFormatError):
        load_portfolio(gap, horizon=2, num_ratings=3)

    neither = tmp_path / "neither.csv"
    neither.write_text("id,group,rating\nl1,G1,1\n")
    with pytest.raises(InputFormatError):
        load_portfolio(neither, horizon=2, num_ratings=3)
