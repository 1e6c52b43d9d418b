import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pyramidal_ddpm.config import ConfigError, RunConfig, apply_overrides, parse_config


def test_empty_document_gives_defaults():
    assert parse_config("") == RunConfig()
    cfg = RunConfig()
    assert cfg.ladder == (8, 16, 32) and cfg.model.pe_degree == 6 and cfg.sampler.lam == 1.0


def test_round_trip_defaults():
    cfg = RunConfig()
    assert parse_config(cfg.to_yaml()) == cfg
    assert parse_config(cfg.to_yaml()).hash() == cfg.hash()


@settings(max_examples=40, deadline=None)
@given(
    T_f=st.integers(1, 2000),
    delta=st.floats(0.01, 1.0),
    lam=st.floats(0, 10),
    seed=st.integers(0, 2**31),
    ladder=st.lists(st.sampled_from([4, 8, 16, 32, 64]), min_size=1, max_size=4, unique=True).map(sorted),
    fmt=st.sampled_from(["raw", "pgm", "ppm"]),
    emit=st.booleans(),
)
def test_round_trip_property(T_f, delta, lam, seed, ladder, fmt, emit):
    cfg = apply_overrides(RunConfig(), [
        f"sampler.T_f={T_f}", f"sampler.delta_ts={delta!r}", f"sampler.lambda={lam!r}", f"sampler.seed={seed}",
        f"ladder={ladder}", f"output.format={fmt}", f"output.emit_levels={str(emit).lower()}",
        "data.params={variance: 0.5}",
    ])
    again = parse_config(cfg.to_yaml())
    assert again == cfg and again.hash() == cfg.hash()


@pytest.mark.parametrize(
    "text",
    [
        "sampler: {lam: 1}",
        "samplr: {}",
        "model: {backend: gpu}",
        "sampler: {T_f: 1.5}",
        "ladder: [8, x]",
        "output: {format: png}",
        "train: {steps: -1}",
        "sampler: [1, 2]",
        "output: {emit_levels: 1}",
        "a: [",
    ],
)
def test_rejects_bad_documents(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_override_errors():
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), ["sampler.T_f"])
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), ["nosuch.key=1"])
    with pytest.raises(ConfigError):
        apply_overrides(RunConfig(), ["sampler.typo=1"])


def test_hash_changes_with_content():
    assert RunConfig().hash() != apply_overrides(RunConfig(), ["sampler.seed=1"]).hash()


def test_exponent_floats_without_dot():
    cfg = apply_overrides(RunConfig(), ["sampler.lambda=1e-3", "train.lr=2E-4"])
    assert cfg.sampler.lam == 1e-3 and cfg.train.lr == 2e-4
    assert parse_config("sampler: {delta_ts: 5e-1}").sampler.delta_ts == 0.5
