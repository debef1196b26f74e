"""
Unit tests for first-order sensitivities and the germ sensitivity matrix.
"""

import numpy as np
import pytest
from scipy.linalg import expm

from src.core.circuits import ContextSpec, GateLabel
from src.core.errors import UnknownLabelError
from src.core.ptm import SuperOp, evaluate_circuit
from src.core.published import load_sequence_set
from src.core.sensitivity import (
    ENTRIES,
    CoefficientKind,
    GermContributions,
    SensitivityMatrix,
    build_B,
    entry_coefficient,
    fiducial_T,
    fiducial_fitness,
    germ_constraint_check,
    germ_fitness,
)

EPSILON = 1e-6


def elementary(j, k):
    e = np.zeros((4, 4))
    e[j - 1, k - 1] = 1.0
    return e


def finite_difference(gs, seq, target, kind):
    label, j, k = target
    base = gs.gate(label).m

    def value(x):
        if kind is CoefficientKind.ERROR_GENERATOR_ENTRY:
            moved = base @ expm(x * elementary(j, k))
        else:
            moved = base + x * elementary(j, k)
        return evaluate_circuit(gs.replace(gates={label: SuperOp(moved)}), seq)

    return (value(EPSILON) - value(-EPSILON)) / (2 * EPSILON)


@pytest.fixture
def gs():
    return ContextSpec.context_free().perfect_gateset()


@pytest.fixture
def f_ref():
    return load_sequence_set("f_ref").sequences


class TestEntryCoefficient:
    """Test cases for exact first-order coefficients."""

    def test_absent_gate_is_zero(self, gs):
        assert entry_coefficient(gs, ["Rx", "Ry"], ("I", 2, 3)) == 0.0

    def test_idle_x_entry_on_ground_state(self, gs):
        """The ground state has no X component to pick up."""
        assert entry_coefficient(gs, ["I"], ("I", 2, 2)) == pytest.approx(0.0, abs=1e-15)

    def test_idle_z_entry_on_ground_state(self, gs):
        assert entry_coefficient(gs, ["I"], ("I", 4, 4)) == pytest.approx(0.5)

    def test_occurrences_add_up(self, gs):
        single = entry_coefficient(gs, ["I"], ("I", 4, 4))
        assert entry_coefficient(gs, ["I"] * 5, ("I", 4, 4)) == pytest.approx(5 * single)

    def test_unknown_target(self, gs):
        with pytest.raises(UnknownLabelError):
            entry_coefficient(gs, ["I"], ("Rz", 2, 2))

    @pytest.mark.parametrize("kind", list(CoefficientKind))
    def test_matches_finite_differences(self, gs, kind):
        rng = np.random.default_rng(11)
        labels = list(gs.labels)
        for _ in range(200):
            seq = [labels[i] for i in rng.integers(0, len(labels), size=int(rng.integers(1, 9)))]
            j, k = ENTRIES[int(rng.integers(0, len(ENTRIES)))]
            target = (labels[int(rng.integers(0, len(labels)))], j, k)
            exact = entry_coefficient(gs, seq, target, kind)
            assert exact == pytest.approx(finite_difference(gs, seq, target, kind), rel=1e-5, abs=1e-8)

    def test_contextual_labels(self):
        """Coefficients are tracked per contextual label."""
        gs = ContextSpec.crosstalk().perfect_gateset()
        seq = ["Rx@4", "I@1", "I@2", "I@1"]
        one = entry_coefficient(gs, seq, ("I@1", 4, 3))
        two = entry_coefficient(gs, seq, ("I@2", 4, 3))
        assert one == pytest.approx(2 * two)


class TestFiducialSensitivity:
    """Test cases for fiducial sensitivities and their fitness."""

    def test_empty_fiducials_only_see_z(self, gs):
        sens = fiducial_T(gs, [()], [()])
        assert not sens.informationally_complete
        nonzero = {entry for entry, value in zip(ENTRIES, sens.T) if value > 0}
        assert nonzero == {(4, 1), (4, 4)}
        assert set(sens.zero_entries) == set(ENTRIES) - nonzero

    def test_reference_fiducials_are_complete(self, gs, f_ref):
        sens = fiducial_T(gs, f_ref, f_ref)
        assert sens.informationally_complete
        assert np.all(sens.T > 0)
        assert sens.T.shape == (12,)

    def test_duplicated_lists_double_T(self, gs, f_ref):
        once = fiducial_T(gs, f_ref, f_ref).T
        twice = fiducial_T(gs, list(f_ref) * 2, f_ref).T
        assert np.allclose(twice, 2 * once)

    def test_empty_list_rejected(self, gs):
        with pytest.raises(ValueError, match="nonempty"):
            fiducial_T(gs, [], [()])

    def test_uniform_vector_is_degenerate(self):
        fitness = fiducial_fitness(np.full(12, 0.5))
        assert fitness.degenerate_uniform
        assert fitness.value == pytest.approx(6.0 / 1e-12)

    def test_zero_entry_is_flagged(self):
        T = np.linspace(0.1, 1.2, 12)
        T[3] = 0.0
        fitness = fiducial_fitness(T)
        assert not fitness.informationally_complete

    def test_scaling_is_inverse(self):
        T = np.linspace(0.1, 1.2, 12)
        base = fiducial_fitness(T).value
        assert fiducial_fitness(3.0 * T).value == pytest.approx(base / 3.0, rel=1e-9)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            fiducial_fitness([np.inf] + [1.0] * 11)

    def test_reference_beats_empty(self, gs, f_ref):
        empty = fiducial_fitness(fiducial_T(gs, [()], [()]))
        reference = fiducial_fitness(fiducial_T(gs, f_ref, f_ref))
        assert reference.informationally_complete and not empty.informationally_complete


class TestSensitivityMatrix:
    """Test cases for assembling B and scoring germ sets."""

    def test_empty_germ_set_rejected(self, gs, f_ref):
        with pytest.raises(ValueError, match="empty"):
            build_B(gs, (f_ref, f_ref), [], 2, ContextSpec.context_free())

    def test_idle_germ_rows_never_decrease(self, gs, f_ref):
        sens = build_B(gs, (f_ref, f_ref), [(GateLabel("I"),)], 4, ContextSpec.context_free())
        assert sens.B.shape == (36, 4)
        assert np.all(np.diff(sens.B, axis=1) >= -1e-12)

    def test_idle_germ_grows_idle_rows_linearly(self, gs, f_ref):
        sens = build_B(gs, (f_ref, f_ref), [(GateLabel("I"),)], 3, ContextSpec.context_free(),
                       targeted=[GateLabel("I")])
        assert np.allclose(sens.B[:, 1], 2 * sens.B[:, 0])
        assert np.allclose(sens.B[:, 2], 4 * sens.B[:, 0])

    def test_b_matches_entry_coefficients(self, gs, f_ref):
        """Each column is the sum of |a1| over the circuits at that repetition."""
        germ = (GateLabel("Rx"), GateLabel("I"))
        sens = build_B(gs, (f_ref, f_ref), [germ], 2, ContextSpec.context_free(),
                       targeted=[GateLabel("I")])
        row = sens.row_labels.index(("I", 3, 4))
        expected = 0.0
        for prep in f_ref:
            for meas in f_ref:
                seq = [str(x) for x in prep] + ["Rx", "I", "Rx", "I"] + [str(x) for x in meas]
                expected += abs(entry_coefficient(gs, seq, ("I", 3, 4)))
        assert sens.B[row, 1] == pytest.approx(expected)

    def test_memory_rows_cover_idles_only(self, f_ref):
        ctx = ContextSpec.memory()
        germs = load_sequence_set("g_mem").sequences
        sens = build_B(ctx.perfect_gateset(), (f_ref, f_ref), germs, 2, ctx)
        assert len(sens.row_labels) == 36
        assert {label for label, _, _ in sens.row_labels} == {"I@1", "I@2", "I@3"}

    def test_ancillary_rows_excluded(self, f_ref):
        ctx = ContextSpec.crosstalk()
        germs = load_sequence_set("g_ct").sequences[:4]
        sens = build_B(ctx.perfect_gateset(), (f_ref, f_ref), germs, 2, ctx)
        assert all(not label.startswith(("Rx", "Ry")) for label, _, _ in sens.row_labels)
        assert len(sens.row_labels) == 48

    def test_ancillary_targets_rejected(self, f_ref):
        ctx = ContextSpec.crosstalk()
        with pytest.raises(ValueError, match="Ancillary"):
            build_B(ctx.perfect_gateset(), (f_ref, f_ref), [(GateLabel("I", "1"),)], 2, ctx,
                    targeted=[GateLabel("Rx", "4")])

    def test_adding_a_germ_never_decreases(self, gs, f_ref):
        ctx = ContextSpec.context_free()
        contributions = GermContributions(gs, (f_ref, f_ref), 3, ctx)
        one = contributions.matrix([(GateLabel("I"),)])
        two = contributions.matrix([(GateLabel("I"),), (GateLabel("Rx"), GateLabel("Ry"))])
        assert np.all(two.B >= one.B)

    def test_parallel_matrix_is_identical(self, gs, f_ref):
        ctx = ContextSpec.context_free()
        germs = load_sequence_set("g").sequences[:5]
        serial = GermContributions(gs, (f_ref, f_ref), 2, ctx).matrix(germs)
        threaded = GermContributions(gs, (f_ref, f_ref), 2, ctx).matrix(germs, workers=3)
        assert np.array_equal(serial.B, threaded.B)

    def test_csv_rows(self):
        sens = SensitivityMatrix(np.array([[1.0, 2.0]]), (("I", 2, 1),))
        rows = sens.csv_rows()
        assert rows[0] == ["gate", "j", "k", "l=1", "l=2"]
        assert rows[1][:3] == ["I", 2, 1]


class TestGermFitness:
    """Test cases for the amplification constraint and germ fitness."""

    def test_increasing_rows_have_no_violations(self):
        sens = SensitivityMatrix(np.array([[1.0, 2.0, 3.0], [0.5, 0.7, 0.9]]), (("I", 2, 1), ("I", 2, 2)))
        assert germ_constraint_check(sens) == []

    def test_constant_row_violates_every_step(self):
        sens = SensitivityMatrix(np.array([[1.0, 1.0, 1.0, 1.0], [1.0, 2.0, 3.0, 4.0]]),
                                 (("I", 2, 1), ("I", 2, 2)))
        violations = germ_constraint_check(sens)
        assert len(violations) == 3
        assert {v.row for v in violations} == {("I", 2, 1)}
        assert [v.l for v in violations] == [1, 2, 3]

    def test_single_column_cannot_be_checked(self):
        with pytest.raises(ValueError, match="two"):
            germ_constraint_check(SensitivityMatrix(np.ones((1, 1)), (("I", 2, 1),)))

    def test_fitness_is_min_of_last_column(self):
        sens = SensitivityMatrix(np.array([[3.0], [1.0], [2.0]]), (("I", 2, 1), ("I", 2, 2), ("I", 2, 3)))
        assert germ_fitness(sens) == 1.0

    def test_violations_rank_below_feasible(self):
        feasible = SensitivityMatrix(np.array([[0.0, 1e-3]]), (("I", 2, 1),))
        infeasible = SensitivityMatrix(np.array([[5.0, 5.0]]), (("I", 2, 1),))
        assert germ_fitness(infeasible) < germ_fitness(feasible)

    def test_reference_set_beats_single_idle(self, gs, f_ref):
        ctx = ContextSpec.context_free()
        g = build_B(gs, (f_ref, f_ref), load_sequence_set("g").sequences, 3, ctx)
        idle = build_B(gs, (f_ref, f_ref), [(GateLabel("I"),)], 3, ctx)
        assert germ_fitness(g) > germ_fitness(idle)

    @pytest.mark.slow
    def test_reference_set_amplifies_at_seven(self, gs, f_ref):
        sens = build_B(gs, (f_ref, f_ref), load_sequence_set("g").sequences, 7, ContextSpec.context_free())
        assert germ_constraint_check(sens) == []
        assert germ_fitness(sens) > 0
