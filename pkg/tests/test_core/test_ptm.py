"""
Unit tests for the Pauli transfer matrix substrate.
"""

import math

import numpy as np
import pytest

from src.core.errors import DegenerateInputError, UnknownLabelError
from src.core.ptm import (
    ErrorGenerator,
    GateSet,
    SuperOp,
    apply_error,
    choi_min_eigenvalue,
    depolarizing,
    error_generator,
    evaluate_circuit,
    identity,
    index_sequences,
    perfect_gateset,
    propagate,
    propagate_batch,
    ptm_from_kraus,
    ptm_of_unitary,
    ptm_to_choi,
    sequence_product,
    standard_gates,
)


class TestSuperOp:
    """Test cases for the channel, state and effect containers."""

    def test_wrong_shape_rejected(self):
        """A PTM must be 4x4."""
        with pytest.raises(ValueError, match="shape"):
            SuperOp(np.eye(3))

    def test_non_finite_rejected(self):
        matrix = np.eye(4)
        matrix[1, 1] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            SuperOp(matrix)

    def test_matrix_is_read_only(self):
        gate = identity()
        with pytest.raises(ValueError):
            gate.m[0, 0] = 2.0

    def test_composition_applies_right_operand_first(self):
        """a @ b runs b first."""
        gates = standard_gates()
        composed = gates["Ry"] @ gates["Rx"]
        assert np.allclose(composed.m, gates["Ry"].m @ gates["Rx"].m)


class TestRotations:
    """Test cases for unitary and Kraus constructions."""

    def test_x90_matrix(self):
        """X90 maps Y to Z and Z to -Y."""
        expected = np.array([
            [1, 0, 0, 0],
            [0, 1, 0, 0],
            [0, 0, 0, -1],
            [0, 0, 1, 0],
        ], dtype=float)
        assert np.allclose(ptm_of_unitary("x", math.pi / 2).m, expected, atol=1e-12)

    def test_y90_matrix(self):
        """Y90 maps Z to X and X to -Z."""
        gate = ptm_of_unitary("y", math.pi / 2).m
        assert gate[1, 3] == pytest.approx(1.0)
        assert gate[3, 1] == pytest.approx(-1.0)

    def test_rotation_axis_must_be_unit(self):
        with pytest.raises(ValueError, match="unit norm"):
            ptm_of_unitary((1.0, 1.0, 0.0), 0.3)

    def test_amplitude_damping_is_trace_preserving(self):
        gamma = 0.2
        kraus = [
            np.array([[1, 0], [0, math.sqrt(1 - gamma)]]),
            np.array([[0, math.sqrt(gamma)], [0, 0]]),
        ]
        channel = ptm_from_kraus(kraus)
        assert channel.is_trace_preserving()
        # the ground state is a fixed point
        assert channel.m[3, 0] == pytest.approx(gamma)
        assert channel.m[3, 3] == pytest.approx(1 - gamma)


class TestCircuitEvaluation:
    """Test cases for circuit probabilities and propagation."""

    @pytest.fixture
    def gs(self):
        return perfect_gateset()

    def test_empty_circuit_is_one(self, gs):
        assert evaluate_circuit(gs, []) == pytest.approx(1.0)

    @pytest.mark.parametrize("copies,expected", [(1, 0.5), (2, 0.0), (3, 0.5), (4, 1.0)])
    def test_x90_powers(self, gs, copies, expected):
        assert evaluate_circuit(gs, ["Rx"] * copies) == pytest.approx(expected, abs=1e-12)

    def test_unknown_label_raises(self, gs):
        with pytest.raises(UnknownLabelError) as excinfo:
            evaluate_circuit(gs, ["Rz"])
        assert excinfo.value.label == "Rz"
        assert "Rx" in excinfo.value.available

    def test_sequence_product_is_time_ordered(self, gs):
        product = sequence_product(gs, ["Rx", "Ry"])
        assert np.allclose(product.m, gs.gate("Ry").m @ gs.gate("Rx").m)

    def test_propagate_is_consistent_at_every_cut(self, gs):
        """backward[t] . forward[t] equals the circuit value for every t."""
        seq = ["Rx", "Ry", "I", "Rx", "Ry", "Ry"]
        forward, backward = propagate(gs, seq)
        value = evaluate_circuit(gs, seq)
        for t in range(len(seq) + 1):
            assert backward[t] @ forward[t] == pytest.approx(value, abs=1e-12)

    def test_propagate_batch_matches_single_propagation(self, gs):
        seqs = [["Rx"], ["Ry", "Rx", "I"], [], ["I", "I"]]
        idx, forward, backward = propagate_batch(gs, seqs)
        assert idx.shape == (4, 3)
        for n, seq in enumerate(seqs):
            single_forward, _ = propagate(gs, seq)
            assert np.allclose(forward[n, :len(seq) + 1], single_forward)
            assert backward[n, 0] @ forward[n, 0] == pytest.approx(evaluate_circuit(gs, seq), abs=1e-12)

    def test_index_sequences_pads_with_identity(self, gs):
        idx, table = index_sequences(gs, [["Rx"], ["Rx", "Ry"]])
        pad = len(gs.labels)
        assert idx[0, 1] == pad
        assert np.allclose(table[pad], np.eye(4))

    def test_index_sequences_unknown_label(self, gs):
        with pytest.raises(UnknownLabelError):
            index_sequences(gs, [["Rx", "Q"]])


class TestGateSet:
    """Test cases for the gate set container."""

    def test_round_trip_through_dict(self):
        gs = perfect_gateset()
        restored = GateSet.from_dict(gs.to_dict())
        assert restored.labels == gs.labels
        for label in gs.labels:
            assert restored.gate(label).allclose(gs.gate(label))

    def test_missing_field(self):
        with pytest.raises(ValueError, match="prep"):
            GateSet.from_dict({"meas": [0, 0, 0, 0], "gates": {}})

    def test_replace_updates_single_gate(self):
        gs = perfect_gateset()
        updated = gs.replace(gates={"I": depolarizing(0.1)})
        assert updated.gate("I").allclose(depolarizing(0.1))
        assert gs.gate("I").allclose(identity())
        assert updated.gate("Rx").allclose(gs.gate("Rx"))


class TestErrorGenerator:
    """Test cases for error generators and the Choi representation."""

    def test_depolarizing_generator(self):
        """log of diag(1, q, q, q) is diag(0, log q, log q, log q)."""
        perfect = standard_gates()["Rx"]
        noisy = perfect @ depolarizing(0.01)
        generator = error_generator(noisy, perfect)
        expected = np.diag([0.0, math.log(0.99), math.log(0.99), math.log(0.99)])
        assert np.allclose(generator.L, expected, atol=1e-12)

    def test_apply_error_inverts_generator(self):
        perfect = standard_gates()["Ry"]
        noisy = perfect @ ptm_of_unitary("z", 0.05) @ depolarizing(0.002)
        generator = error_generator(noisy, perfect)
        assert apply_error(perfect, generator).allclose(noisy, atol=1e-10)

    def test_scale_zero_is_perfect(self):
        perfect = standard_gates()["Rx"]
        generator = ErrorGenerator(np.diag([0.0, -0.1, -0.1, -0.1]))
        assert apply_error(perfect, generator, 0.0) is perfect

    def test_negative_eigenvalue_is_degenerate(self):
        """A pi rotation relative to the perfect gate sits on the branch cut."""
        perfect = identity()
        with pytest.raises(DegenerateInputError):
            error_generator(ptm_of_unitary("z", math.pi), perfect)

    def test_singular_perfect_gate(self):
        with pytest.raises(DegenerateInputError, match="invertible"):
            error_generator(identity(), SuperOp(np.diag([1.0, 0.0, 0.0, 0.0])))

    def test_choi_of_unitary(self):
        choi = ptm_to_choi(standard_gates()["Rx"])
        eigenvalues = np.linalg.eigvalsh(choi)
        assert np.trace(choi).real == pytest.approx(2.0)
        assert eigenvalues.min() > -1e-12
        # unitary channels have rank-one Choi matrices
        assert np.sum(eigenvalues > 1e-9) == 1

    def test_universal_not_is_not_completely_positive(self):
        assert choi_min_eigenvalue(SuperOp(np.diag([1.0, -1.0, -1.0, -1.0]))) == pytest.approx(-1.0)
