import numpy as np
import pytest

from ghgest import synth
from ghgest.dataset import NUMERIC, FeatureSchema, make_dataset


def toy_dataset(values, target=None, sectors=None, names=None, companies=None, years=None):
    """Dataset from a float matrix (NaN = MISSING) with default keys and sectors."""
    values = np.asarray(values, dtype=float)
    n, d = values.shape
    names = names or [f"x{j}" for j in range(d)]
    schema = FeatureSchema([(name, NUMERIC) for name in names])
    if sectors is None:
        sectors = [("Industrials", "I1", "I11", "I111")] * n
    sectors = np.array([tuple(s) + ("",) * (4 - len(s)) for s in sectors], dtype=object)
    companies = [f"C{i:05d}" for i in range(n)] if companies is None else companies
    years = [2020] * n if years is None else years
    return make_dataset(schema, values, companies, years, sectors, target)


@pytest.fixture(scope="session")
def small_synth():
    """A desk-scale panel: (labeled, unlabeled, oracle, latent)."""
    return synth.generate(synth.SynthConfig(seed=11, companies=4000, labeled_fraction=0.1,
                                            max_unlabeled_rows=6000))


def planted_glm(seed, n=2000, noise_features=20):
    """y ~ Gamma(shape 2, mean exp(1 + 2 x1)) beside pure-noise columns."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 1 + noise_features))
    y = rng.gamma(2.0, np.exp(1.0 + 2.0 * x[:, 0]) / 2.0)
    return x, y


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> str:
    line = f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
