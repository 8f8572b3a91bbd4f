import numpy as np
import pytest


def random_spd(rng, d, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    eig = np.exp(rng.uniform(0.0, np.log(cond), d))
    return (q * eig) @ q.T


def bartlett_inverse_wishart(rng, dof, scale, n):
    """Draw ``n`` matrices R with R^-1 ~ Wishart(dof, scale^-1) via the Bartlett decomposition."""
    d = scale.shape[0]
    chol = np.linalg.cholesky(np.linalg.inv(scale))
    a = np.zeros((n, d, d))
    for i in range(d):
        a[:, i, i] = np.sqrt(rng.chisquare(dof - i, n))
        a[:, i, :i] = rng.standard_normal((n, i))
    la = chol @ a
    w = la @ np.swapaxes(la, 1, 2)
    return np.linalg.inv(w), w


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS: list[str] = []


def record_verdict(line: str) -> None:
    _VERDICTS.append(line)


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
