import pytest

from medaug.corpus import SynthBenchSpec, build_vocab, make_split, synth_benchmark
from medaug.genlm import GeneratorConfig, GeneratorModel, lm_finetune

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")


@pytest.fixture(scope="session")
def small_spec():
    return SynthBenchSpec(n_docs=800, seed=11)


@pytest.fixture(scope="session")
def small_split(small_spec):
    return make_split(synth_benchmark(small_spec), seed=3)


@pytest.fixture(scope="session")
def small_vocab(small_split):
    return build_vocab(small_split.train, min_freq=2)


@pytest.fixture(scope="session")
def tuned_lm(small_split, small_vocab):
    cfg = GeneratorConfig(d_model=24, n_heads=2, n_layers=1, context_len=64, epochs=3, lr=5e-3)
    model = GeneratorModel.init(small_vocab, cfg, seed=0)
    lm_finetune(model, small_split.train, balanced=True, seed=0)
    return model
