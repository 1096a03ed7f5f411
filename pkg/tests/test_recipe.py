import numpy as np
import pytest
from scipy import stats

from vitp import recipe as rc
from vitp.streams import make_rng


def test_reference_recipe_weights():
    spec = rc.reference_recipe()
    by_name = {e.name: e for e in spec.entries}
    assert by_name["GeoChat"].weight == 128_000
    assert by_name["VRSBench"].weight == 190_000
    assert by_name["Mini-InternVL"].weight == pytest.approx(41_820)


def test_reference_recipe_passes_all_principles():
    report = rc.validate_recipe(rc.reference_recipe())
    assert report.principles == {1: True, 2: True, 3: True, 4: True}
    assert report.all_pass


def test_without_general_entry_fails_principle_4():
    spec = rc.reference_recipe()
    trimmed = rc.MixtureSpec(entries=tuple(
        e for e in spec.entries if "general" not in e.tags))
    report = rc.validate_recipe(trimmed)
    assert report.principles[1] and report.principles[2] and report.principles[3]
    assert not report.principles[4]


def test_single_entry_fails_principle_1():
    spec = rc.MixtureSpec(entries=(
        rc.RecipeEntry("only", 100, 1.0, ("caption",)),))
    report = rc.validate_recipe(spec, downstream_modalities=("optical",),
                                needs_localization=False)
    assert not report.principles[1]


def test_probabilities_normalize_and_symmetry():
    spec = rc.MixtureSpec(entries=(
        rc.RecipeEntry("a", 100, 2.0, ("caption",)),
        rc.RecipeEntry("b", 200, 1.0, ("vqa",)),
    ))
    p = rc.mixture_probabilities(spec)
    np.testing.assert_allclose(p, [0.5, 0.5], atol=1e-15)
    assert abs(p.sum() - 1.0) <= 1e-12


def test_zero_weights_rejected():
    spec = rc.MixtureSpec(entries=(
        rc.RecipeEntry("a", 10, 0.0, ("caption",)),))
    with pytest.raises(ValueError):
        rc.mixture_probabilities(spec)


def test_sampler_single_entry_degenerate():
    spec = rc.MixtureSpec(entries=(rc.RecipeEntry("solo", 4, 1.0, ("caption",)),))
    datasets = {"solo": ["e0", "e1", "e2", "e3"]}
    batch = rc.sample_batch(spec, datasets, make_rng("solo"), 16)
    assert len(batch) == 16
    assert set(batch).issubset(set(datasets["solo"]))


def test_sampler_missing_handle_rejected():
    spec = rc.MixtureSpec(entries=(rc.RecipeEntry("x", 4, 1.0, ("caption",)),))
    with pytest.raises(KeyError):
        rc.sample_batch(spec, {}, make_rng("miss"), 2)


def test_sampler_deterministic():
    spec = rc.desk_recipe()
    datasets = {e.name: list(range(e.size)) for e in spec.entries}
    a = rc.sample_batch(spec, datasets, make_rng("det-sample"), 32)
    b = rc.sample_batch(spec, datasets, make_rng("det-sample"), 32)
    assert a == b


def test_sampler_two_entry_proportions():
    spec = rc.MixtureSpec(entries=(
        rc.RecipeEntry("big", 900, 1.0, ("caption",)),
        rc.RecipeEntry("small", 100, 1.0, ("vqa",)),
    ))
    idx = rc.sample_entry_indices(spec, make_rng("prop"), 100_000)
    frac = (idx == 0).mean()
    sigma = np.sqrt(0.9 * 0.1 / 100_000)
    assert abs(frac - 0.9) <= 3 * sigma


def test_sampler_chi_square_goodness_of_fit():
    spec = rc.MixtureSpec(entries=tuple(
        rc.RecipeEntry(f"e{i}", s, r, ("caption",))
        for i, (s, r) in enumerate([(100, 1.0), (50, 2.0), (400, 0.25),
                                    (10, 30.0), (200, 0.5)])))
    p = rc.mixture_probabilities(spec)
    idx = rc.sample_entry_indices(spec, make_rng("chi5"), 100_000)
    counts = np.bincount(idx, minlength=len(p))
    stat = ((counts - 100_000 * p) ** 2 / (100_000 * p)).sum()
    pval = stats.chi2.sf(stat, df=len(p) - 1)
    assert pval > 0.01


def test_manifest_roundtrip(tmp_path):
    spec = rc.desk_recipe()
    path = tmp_path / "recipe.tsv"
    rc.save_manifest(spec, path)
    loaded = rc.load_manifest(path)
    assert loaded == spec


def test_manifest_rejects_malformed_line():
    with pytest.raises(ValueError):
        rc.parse_manifest("name\t12\t1.0\n")


def test_desk_recipe_valid_and_general_band():
    spec = rc.desk_recipe()
    report = rc.validate_recipe(spec)
    assert report.all_pass
    p = rc.mixture_probabilities(spec)
    general = sum(pi for pi, e in zip(p, spec.entries) if "general" in e.tags)
    assert 0.01 <= general <= 0.10


def test_desk_datasets_generate_examples():
    datasets = rc.desk_datasets(seed=0)
    spec = rc.desk_recipe()
    batch = rc.sample_batch(spec, datasets, make_rng("desk-b"), 8)
    assert len(batch) == 8
    for ex in batch:
        assert ex.response
        assert ex.image.shape == (32, 32, 3)


def test_shard_roundtrip(tmp_path):
    datasets = rc.desk_datasets(seed=1)
    examples = [datasets["cap-broad"][i] for i in range(5)]
    path = tmp_path / "shard.bin"
    rc.write_shard(path, examples)
    loaded = rc.read_shard(path)
    assert len(loaded) == 5
    for a, b in zip(examples, loaded):
        assert a.query == b.query and a.response == b.response and a.task == b.task
        # 8-bit quantization bound
        assert np.abs(a.image - b.image).max() <= 0.5 / 255.0 + 1e-6


def test_shard_truncated_rejected(tmp_path):
    datasets = rc.desk_datasets(seed=1)
    path = tmp_path / "bad.bin"
    rc.write_shard(path, [datasets["cap-broad"][0]])
    blob = path.read_bytes()
    path.write_bytes(blob[:-3])
    with pytest.raises(ValueError):
        rc.read_shard(path)
