import numpy as np
import pytest

from tosi.core import tosi_multi
from tosi.errors import ConvergenceError, DomainError
from tosi.harness import gen_regression
from tosi.numerics import RngStream
from tosi.regression import RegressionBackend, lasso_cd
import tosi.tuning
from tosi.tuning import _scan, TraceEntry, exact_support, lambda_grid, select_lambda_tosi


def sample(seed, n_main=50, n_extra=50, p=30, s=3, rho=2.0, beta=None):
    if beta is None:
        beta = np.zeros(p)
        beta[:s] = rho * np.array([1.0, 1.5, 2.0][:s] + [1.0] * max(0, s - 3))
    X, y, _ = gen_regression(n_main + n_extra, p, s, RngStream(seed, "tune-test"), beta=beta)
    data = np.column_stack([y, X])
    return data[:n_main], data[n_main:], beta


def test_single_lambda_grid():
    main, extra, _ = sample(1)
    out = select_lambda_tosi(main, extra, [0.5], 0.05, 1, RngStream(1))
    assert len(out.trace) == 1


def test_reproducible():
    main, extra, _ = sample(2)
    grid = lambda_grid(extra[:, 1:], extra[:, 0], 20)
    a = select_lambda_tosi(main, extra, grid, 0.05, 2, RngStream(7))
    b = select_lambda_tosi(main, extra, grid, 0.05, 2, RngStream(7))
    assert a.to_dict() == b.to_dict()


def test_found_invariant_and_pvalues_reproduce():
    main, extra, _ = sample(3)
    grid = lambda_grid(extra[:, 1:], extra[:, 0], 30)
    stream = RngStream(11, "t")
    out = select_lambda_tosi(main, extra, grid, 0.05, 3, stream)
    assert out.status == "found"
    entry = next(e for e in out.trace if e.lam == out.lambda_star)
    assert entry.p_max >= 0.05 and entry.p_min < 0.05
    support = lasso_cd(extra[:, 1:], extra[:, 0], out.lambda_star).support
    assert np.array_equal(support, out.support)
    zeros = np.setdiff1d(np.arange(main.shape[1] - 1), support)
    backend = RegressionBackend()
    assert tosi_multi(main, zeros, backend, "max", 3, 0.05, stream).combined_p == entry.p_max
    assert tosi_multi(main, support, backend, "min", 3, 0.05, stream).combined_p == entry.p_min


def test_strong_signal_true_zero_set_is_found():
    # ToMax still rejects a true zero set with probability alpha, so the limit is 1 - alpha
    found = 0
    for seed in range(60):
        main, extra, beta = sample(100 + seed, n_main=200, n_extra=200, p=20, rho=3.0)
        X, y = extra[:, 1:], extra[:, 0]
        grid = lambda_grid(X, y, 60)
        hits = [lam for lam in grid if np.array_equal(lasso_cd(X, y, lam).support, [0, 1, 2])]
        out = select_lambda_tosi(main, extra, [hits[len(hits) // 2]], 0.05, 1, RngStream(seed))
        found += out.status == "found" and exact_support(out, [0, 1, 2])
    assert found >= 51


def test_grid_too_small_gives_boundary():
    main, extra, _ = sample(4, p=30)
    out = select_lambda_tosi(main, extra, [1e-4, 2e-4], 0.05, 1, RngStream(4))
    assert out.status != "found" and out.lambda_star is None
    assert out.support.size == 0


def test_empty_sets_are_skipped():
    main, extra, _ = sample(5)
    top = lambda_grid(extra[:, 1:], extra[:, 0], 1)[0]
    out = select_lambda_tosi(main, extra, [10 * top], 0.05, 1, RngStream(5))
    assert out.trace[0].decision == "skipped"
    assert "empty" in out.trace[0].note
    assert out.status == "boundary_low"


def test_stalled_lasso_points_are_skipped(monkeypatch):
    main, extra, _ = sample(8)
    grid = lambda_grid(extra[:, 1:], extra[:, 0], 12)
    clean = select_lambda_tosi(main, extra, grid, 0.05, 1, RngStream(8))

    def flaky(X, y, lam, **kw):
        if lam < grid[-4]:
            raise ConvergenceError("stalled", residual=1e-6)
        return lasso_cd(X, y, lam, **kw)

    monkeypatch.setattr(tosi.tuning, "lasso_cd", flaky)
    out = select_lambda_tosi(main, extra, grid, 0.05, 1, RngStream(8))
    assert [e.decision for e in out.trace[-3:]] == ["skipped"] * 3
    assert all("did not converge" in e.note for e in out.trace[-3:])
    assert out.trace[:-3] == clean.trace[:-3]
    assert out.monotone_violations == tuple(i for i in clean.monotone_violations if i < len(grid) - 3)


def test_monotone_violations_match_trace():
    main, extra, _ = sample(6)
    out = select_lambda_tosi(main, extra, lambda_grid(extra[:, 1:], extra[:, 0], 25), 0.05, 1,
                             RngStream(6))
    nz = [e.n_zero for e in out.trace]
    assert list(out.monotone_violations) == [i for i in range(1, len(nz)) if nz[i] > nz[i - 1]]
    assert [e.lam for e in out.trace] == sorted((e.lam for e in out.trace), reverse=True)


def test_scan_rules():
    def e(lam, d):
        return TraceEntry(lam, 1, 1, 0.5, 0.5, d)
    entries = [e(3, "max_rejects"), e(2, "min_accepts"), e(1, "found")]
    assert _scan(entries, "directional") == (None, "boundary_high")
    assert _scan(entries, "first_joint") == (2, "found")
    assert _scan([e(3, "max_rejects")], "directional") == (None, "boundary_low")
    assert _scan([e(3, "skipped"), e(2, "found")], "directional") == (1, "found")


@pytest.mark.parametrize("grid", [[], [np.nan], [-1.0]])
def test_bad_grid(grid):
    main, extra, _ = sample(7)
    with pytest.raises(DomainError):
        select_lambda_tosi(main, extra, grid, 0.05, 1, RngStream(0))


def test_needs_stream_and_matching_columns():
    main, extra, _ = sample(8)
    with pytest.raises(DomainError):
        select_lambda_tosi(main, extra, [0.1], 0.05, 1, None)
    with pytest.raises(DomainError):
        select_lambda_tosi(main, extra[:, :-1], [0.1], 0.05, 1, RngStream(0))


def test_lambda_grid_shape():
    main, _, _ = sample(9)
    grid = lambda_grid(main[:, 1:], main[:, 0], 10, 0.01)
    assert grid.size == 10 and grid[0] > grid[-1]
    assert grid[-1] == pytest.approx(0.01 * grid[0])
