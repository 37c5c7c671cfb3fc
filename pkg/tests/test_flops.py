import pytest

from gfnoma.errors import ConfigError
from gfnoma.flops import (FlopModel, TABLE3_PRINTED, attention_block,
                          batchnorm_block, flops, hidden_block, input_block,
                          mmse_term, output_block, proposed_closed_form,
                          softmax_block)

FULL = dict(num_devices=200, subcarriers=100, hidden_layers=3,
            hidden_width=1000)


@pytest.mark.parametrize("technique", sorted(TABLE3_PRINTED))
@pytest.mark.parametrize("sparsity", [10, 20, 30, 40])
def test_published_cells_within_3_percent(technique, sparsity):
    printed = TABLE3_PRINTED[technique][sparsity]
    value = flops(FlopModel(technique=technique, sparsity=sparsity, **FULL))
    assert abs(value - printed) / printed <= 0.03


def test_proposed_anchor_value():
    value = flops(FlopModel(technique="proposed", sparsity=10, **FULL))
    assert value == pytest.approx(1.0436e8, rel=1e-4)


def test_proposed_equals_closed_form():
    for s in (10, 20, 30, 40):
        by_components = flops(FlopModel(technique="proposed", sparsity=s,
                                        **FULL))
        closed = proposed_closed_form(200, 100, 3, 1000, s)
        assert by_components == pytest.approx(closed, rel=1e-12)


def test_component_identities():
    alpha, n, k, layers = 1000, 100, 200, 3
    assert input_block(alpha, 2 * n) == 8 * (4 * n - 1) * alpha + alpha
    assert batchnorm_block(alpha) == 4 * alpha
    assert hidden_block(alpha, layers) == 16 * layers * alpha ** 2 \
        - layers * alpha
    assert attention_block(alpha) == 6 * alpha ** 2
    assert output_block(alpha, k) == 2 * k * alpha
    assert softmax_block(k) == 3 * k - 1


def test_full_frame_input_width_substitution():
    alpha = 1000
    n, j = 100, 7
    per_slot = flops(FlopModel(technique="proposed", sparsity=10, **FULL))
    full_frame = flops(FlopModel(technique="proposed", sparsity=10,
                                 input_width=2 * n * j, **FULL))
    assert full_frame - per_slot \
        == pytest.approx(input_block(alpha, 2 * n * j)
                         - input_block(alpha, 2 * n), rel=1e-12)


def test_monotone_in_sparsity():
    for technique in TABLE3_PRINTED:
        values = [flops(FlopModel(technique=technique, sparsity=s, **FULL))
                  for s in range(5, 45, 5)]
        assert all(b > a for a, b in zip(values, values[1:]))


def test_sparsity_scaling_trend():
    # network count grows < 2x from S=10 to S=20, LS-OMP grows > 10x
    p10 = flops(FlopModel(technique="proposed", sparsity=10, **FULL))
    p20 = flops(FlopModel(technique="proposed", sparsity=20, **FULL))
    o10 = flops(FlopModel(technique="ls-omp", sparsity=10, **FULL))
    o20 = flops(FlopModel(technique="ls-omp", sparsity=20, **FULL))
    assert p20 / p10 < 2.0
    assert o20 / o10 > 10.0


def test_shared_mmse_term():
    n, s = 100, 10
    assert mmse_term(n, s) == 2 * n + s * (14 / 3 * n ** 3 + n ** 2 - n)
    # lstm-cs and proposed depend on S only through the shared MMSE term
    base = dict(FULL, sparsity=17)
    deltas = set()
    for tech in ("lstm-cs", "proposed"):
        with_term = flops(FlopModel(technique=tech, **base))
        alt = flops(FlopModel(technique=tech, **dict(base, sparsity=18)))
        deltas.add(round(alt - with_term, 6))
    assert deltas == {round(mmse_term(100, 18) - mmse_term(100, 17), 6)}


def test_unknown_technique_rejected():
    with pytest.raises(ConfigError):
        FlopModel(technique="magic", sparsity=10, **FULL)


def test_positive_parameters_required():
    with pytest.raises(ConfigError):
        FlopModel(technique="proposed", sparsity=0, **FULL)
