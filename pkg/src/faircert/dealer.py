"""Trusted-dealer emulation of the two-party secure computation.

A session takes one private input from each party, runs a named circuit once
both have asked for the same one, and hands each party only its designated
output. The session records two things auditors care about: a leakage log
(every datum actually delivered, to whom, and its size) and a timestamp-free
transcript of the messages (input / compute / output / abort) suitable for
line-oriented audit files.

Two circuits exist. The certification circuit evaluates the server's model
on the regulator's test bundle (augmenting it first when the bundle says so)
and decides fairness with division-free integer comparisons: the gap test
|err0*m1 - err1*m0| * 10**6 < threshold_micro * m0 * m1 per comparable pair,
never forming a quotient. The inference circuit returns the model's label
for one query plus the Merkle digest of the model bytes actually used, which
is what lets the client check the certificate afterwards.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from fractions import Fraction

from .augmentor import AugmentorConfig, augment_dataset
from .crypto import merkle_root, encode_fairness_spec, decode_fairness_spec
from .fairness import (
    EmptyCellError,
    FairnessSpec,
    GroupRiskTable,
    MICRO,
    build_risk_table,
    comparison_cells,
    min_samples,
    relevant_counts,
    to_micro,
)
from .model import (
    Dataset,
    DimensionMismatchError,
    MalformedDatasetError,
    MalformedModelError,
    Sample,
    decode_dataset,
    encode_dataset,
    deserialize_model,
    parameter_count,
    predict,
    serialize_model,
)

CIRCUIT_CERT = 1
CIRCUIT_INFER = 2

PARTY_SERVER = 1  # model holder
PARTY_CHECKER = 2  # regulator (certification) or client (inference)

STATE_AWAITING_INPUT = "AWAITING_INPUT"
STATE_READY = "READY"
STATE_COMPUTED = "COMPUTED"
STATE_DELIVERED = "DELIVERED"
STATE_ABORTED = "ABORTED"

ABORT_SIZE_MISMATCH = "SIZE_MISMATCH"
ABORT_MALFORMED_MODEL = "MALFORMED_MODEL"
ABORT_EMPTY_CELL = "EMPTY_CELL"
ABORT_DIMENSION_MISMATCH = "DIMENSION_MISMATCH"

MODE_PRIVATE_BYTE = 0
MODE_AUGMENTED_BYTE = 1


class WrongStateError(RuntimeError):
    pass


class CircuitMismatchError(ValueError):
    pass


class SessionAbort(RuntimeError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


# Test bundle: what the checking party feeds the certification circuit.

def encode_test_bundle(
    spec: FairnessSpec, dataset: Dataset, aug: AugmentorConfig | None = None
) -> bytes:
    out = encode_fairness_spec(spec)
    if aug is None:
        out += bytes([MODE_PRIVATE_BYTE])
    else:
        out += bytes([MODE_AUGMENTED_BYTE]) + aug.encode()
    return out + encode_dataset(dataset)


def decode_test_bundle(
    data: bytes,
) -> tuple[FairnessSpec, Dataset, AugmentorConfig | None]:
    spec, offset = decode_fairness_spec(data, 0)
    if offset >= len(data):
        raise MalformedDatasetError("bundle missing mode byte")
    mode = data[offset]
    offset += 1
    aug = None
    if mode == MODE_AUGMENTED_BYTE:
        aug = AugmentorConfig.decode(data[offset : offset + 24])
        offset += 24
    elif mode != MODE_PRIVATE_BYTE:
        raise MalformedDatasetError(f"unknown bundle mode {mode}")
    return spec, decode_dataset(data[offset:]), aug


# Division-free fairness decision. This is the circuit's route; the host
# route in fairness.decide compares exact rationals. Keep them separate.

def integer_gap_strictly_below(
    table: GroupRiskTable, metric, threshold: Fraction
) -> bool:
    """Gap < threshold decided purely on integers via cross-multiplication."""
    t_micro = to_micro(threshold)
    for cells in comparison_cells(table, metric):
        for i in range(len(cells)):
            n0, d0 = cells[i]
            for j in range(i + 1, len(cells)):
                n1, d1 = cells[j]
                if d0 == 0 or d1 == 0:
                    raise EmptyCellError("a compared cell has no samples")
                if abs(n0 * d1 - n1 * d0) * MICRO >= t_micro * d0 * d1:
                    return False
    return True


def _exact_gap_from_pairs(table: GroupRiskTable, metric) -> Fraction:
    gap = Fraction(0)
    for cells in comparison_cells(table, metric):
        for i in range(len(cells)):
            n0, d0 = cells[i]
            for j in range(i + 1, len(cells)):
                n1, d1 = cells[j]
                diff = Fraction(abs(n0 * d1 - n1 * d0), d0 * d1)
                if diff > gap:
                    gap = diff
    return gap


def certification_decision(spec: FairnessSpec, table: GroupRiskTable) -> bool:
    """The circuit's pass bit: integer gap test plus the sample-count
    condition on the public counts, evaluated beside the integer core."""
    if table.num_groups >= 2:
        if not integer_gap_strictly_below(table, spec.metric, spec.threshold):
            return False
        gap = _exact_gap_from_pairs(table, spec.metric)
    else:
        gap = Fraction(0)
    required = min_samples(spec, gap, table.num_groups, table.num_labels)
    return min(relevant_counts(table, spec.metric)) >= required


# Circuits: suitability(x1, x2) raises SessionAbort; evaluate returns the
# per-party outputs as named parts so deliveries can be audited by name.

_Parts = list[tuple[str, bytes]]


def _cert_suitability(model_bytes: bytes, bundle_bytes: bytes) -> None:
    if len(model_bytes) < 15:
        raise SessionAbort(ABORT_SIZE_MISMATCH)
    try:
        _, dataset, _ = decode_test_bundle(bundle_bytes)
    except ValueError:
        raise SessionAbort(ABORT_SIZE_MISMATCH) from None
    if not dataset.samples:
        raise SessionAbort(ABORT_SIZE_MISMATCH)


def _cert_evaluate(model_bytes: bytes, bundle_bytes: bytes) -> tuple[_Parts, _Parts]:
    try:
        model = deserialize_model(model_bytes)
    except MalformedModelError:
        raise SessionAbort(ABORT_MALFORMED_MODEL) from None
    spec, dataset, aug = decode_test_bundle(bundle_bytes)
    if aug is not None:
        dataset = augment_dataset(aug, dataset)
    try:
        predictions = [predict(model, s) for s in dataset.samples]
    except DimensionMismatchError:
        raise SessionAbort(ABORT_DIMENSION_MISMATCH) from None
    table = build_risk_table(dataset, predictions)
    try:
        fair = certification_decision(spec, table)
    except EmptyCellError:
        raise SessionAbort(ABORT_EMPTY_CELL) from None
    digest = merkle_root(model_bytes)
    checker: _Parts = [
        ("fair_bit", b"\x01" if fair else b"\x00"),
        ("model_digest", digest),
    ]
    return [], checker


def encode_query(features: tuple[int, ...]) -> bytes:
    return struct.pack("<I", len(features)) + struct.pack(
        f"<{len(features)}i", *features
    )


def decode_query(data: bytes) -> tuple[int, ...]:
    if len(data) < 4:
        raise ValueError("query too short")
    (dim,) = struct.unpack_from("<I", data, 0)
    if len(data) != 4 + 4 * dim:
        raise ValueError("query length does not match its dimension")
    return struct.unpack_from(f"<{dim}i", data, 4)


def _infer_suitability(model_bytes: bytes, query_bytes: bytes) -> None:
    if len(model_bytes) < 15:
        raise SessionAbort(ABORT_SIZE_MISMATCH)
    try:
        features = decode_query(query_bytes)
    except ValueError:
        raise SessionAbort(ABORT_SIZE_MISMATCH) from None
    try:
        model = deserialize_model(model_bytes)
    except MalformedModelError:
        raise SessionAbort(ABORT_MALFORMED_MODEL) from None
    if len(features) != model.dimension:
        raise SessionAbort(ABORT_DIMENSION_MISMATCH)


def _infer_evaluate(model_bytes: bytes, query_bytes: bytes) -> tuple[_Parts, _Parts]:
    model = deserialize_model(model_bytes)
    features = decode_query(query_bytes)
    # A query carries no group; a wrapper model served for inference flips
    # by its first group's rate. Deployed models are linear or lookup.
    sample = Sample(features=tuple(features), group=0, label=0)
    label = predict(model, sample)
    digest = merkle_root(model_bytes)
    checker: _Parts = [
        ("prediction", struct.pack("<H", label)),
        ("model_digest", digest),
    ]
    return [], checker


_CIRCUITS = {
    CIRCUIT_CERT: (_cert_suitability, _cert_evaluate),
    CIRCUIT_INFER: (_infer_suitability, _infer_evaluate),
}


@dataclass(frozen=True)
class LeakageEntry:
    party: str
    name: str
    length: int


@dataclass(frozen=True)
class TranscriptEntry:
    seq: int
    party: str
    kind: str
    length: int
    digest: str

    def line(self) -> str:
        return f"{self.seq} {self.party} {self.kind} {self.length} {self.digest}"


def _party_name(party: int) -> str:
    return {PARTY_SERVER: "P1", PARTY_CHECKER: "P2"}[party]


class FscSession:
    """One run of the ideal functionality between two parties."""

    def __init__(self) -> None:
        self.state = STATE_AWAITING_INPUT
        self.abort_reason: str | None = None
        self.leakage_log: list[LeakageEntry] = []
        self.transcript: list[TranscriptEntry] = []
        self._inputs: dict[int, bytes | None] = {PARTY_SERVER: None, PARTY_CHECKER: None}
        self._requests: dict[int, int | None] = {PARTY_SERVER: None, PARTY_CHECKER: None}
        self._outputs: dict[int, _Parts] = {}
        self._delivered: dict[int, bool] = {PARTY_SERVER: False, PARTY_CHECKER: False}

    def _record(self, party: str, kind: str, payload: bytes) -> None:
        self.transcript.append(
            TranscriptEntry(
                seq=len(self.transcript),
                party=party,
                kind=kind,
                length=len(payload),
                digest=hashlib.sha3_256(payload).hexdigest(),
            )
        )

    def _check_party(self, party: int) -> None:
        if party not in (PARTY_SERVER, PARTY_CHECKER):
            raise ValueError(f"unknown party {party}")

    def input(self, party: int, payload: bytes) -> None:
        self._check_party(party)
        if self.state != STATE_AWAITING_INPUT or self._inputs[party] is not None:
            raise WrongStateError(f"cannot accept input in state {self.state}")
        self._inputs[party] = bytes(payload)
        self._record(_party_name(party), "input", payload)
        if all(v is not None for v in self._inputs.values()):
            self.state = STATE_READY

    def _abort(self, reason: str) -> None:
        self.state = STATE_ABORTED
        self.abort_reason = reason
        self._record("F", "abort", reason.encode("ascii"))

    def compute(self, party: int, circuit_id: int) -> None:
        """Record a compute request; runs the circuit once both agree."""
        self._check_party(party)
        if self.state != STATE_READY:
            raise WrongStateError(f"compute requires READY, session is {self.state}")
        other = self._requests[PARTY_CHECKER if party == PARTY_SERVER else PARTY_SERVER]
        if other is not None and other != circuit_id:
            raise CircuitMismatchError(
                f"parties disagree on the circuit ({other} vs {circuit_id})"
            )
        if circuit_id not in _CIRCUITS:
            raise CircuitMismatchError(f"unknown circuit id {circuit_id}")
        self._requests[party] = circuit_id
        self._record(_party_name(party), "compute", bytes([circuit_id]))
        if any(v is None for v in self._requests.values()):
            return
        suitability, evaluate = _CIRCUITS[circuit_id]
        x1, x2 = self._inputs[PARTY_SERVER], self._inputs[PARTY_CHECKER]
        try:
            suitability(x1, x2)
            y1, y2 = evaluate(x1, x2)
        except SessionAbort as abort:
            self._abort(abort.reason)
            return
        self._outputs = {PARTY_SERVER: y1, PARTY_CHECKER: y2}
        self.state = STATE_COMPUTED

    def output(self, party: int) -> bytes:
        """Deliver the party's designated output (possibly empty)."""
        self._check_party(party)
        if self.state == STATE_ABORTED:
            raise SessionAbort(self.abort_reason or "aborted")
        if self.state not in (STATE_COMPUTED, STATE_DELIVERED):
            raise WrongStateError(f"output requires COMPUTED, session is {self.state}")
        if self._delivered[party]:
            raise WrongStateError("output already delivered")
        parts = self._outputs[party]
        payload = b"".join(data for _, data in parts)
        for name, data in parts:
            self.leakage_log.append(
                LeakageEntry(party=_party_name(party), name=name, length=len(data))
            )
        self._record(_party_name(party), "output", payload)
        self._delivered[party] = True
        if all(self._delivered.values()):
            self.state = STATE_DELIVERED
        return payload

    def transcript_lines(self) -> list[str]:
        return [entry.line() for entry in self.transcript]

    def write_audit(self, path: str) -> None:
        with open(path, "w", encoding="ascii") as fh:
            for line in self.transcript_lines():
                fh.write(line + "\n")


# Gate-cost model for garbling these computations as boolean circuits.

KECCAK_INPUT_BITS = 1600
KECCAK_AND_GATES = 38400
HASH_AND_GATES_PER_INPUT_BIT = KECCAK_AND_GATES / KECCAK_INPUT_BITS  # 24.0
MERKLE_AND_GATES_PER_INPUT_BIT = 2 * HASH_AND_GATES_PER_INPUT_BIT  # tree doubles it
MUL32_AND_GATES_PER_BIT = 185
ADD32_AND_GATES_PER_BIT = 6
INFERENCE_AND_GATES_PER_WEIGHT_BIT = MUL32_AND_GATES_PER_BIT + ADD32_AND_GATES_PER_BIT


@dataclass(frozen=True)
class GateCostReport:
    hash_and_gates_per_input_bit: float
    merkle_and_gates_per_input_bit: float
    inference_and_gates_per_weight_bit: float
    merkle_total_and_gates: int
    total_inference_gates: int
    overhead_ratio: float | None

    def to_lines(self) -> list[str]:
        ratio = "n/a" if self.overhead_ratio is None else f"{self.overhead_ratio:.4f}"
        return [
            f"hash AND gates per input bit: {self.hash_and_gates_per_input_bit:g}",
            f"merkle AND gates per input bit: {self.merkle_and_gates_per_input_bit:g}",
            f"inference AND gates per weight bit: {self.inference_and_gates_per_weight_bit:g}",
            f"merkle total AND gates: {self.merkle_total_and_gates}",
            f"inference total AND gates: {self.total_inference_gates}",
            f"commitment overhead ratio: {ratio}",
        ]


def estimate_gates(model_byte_count: int, weight_bit_count: int) -> GateCostReport:
    """Arithmetic-only cost estimate; no circuits are built."""
    if model_byte_count < 1:
        raise ValueError("model_byte_count must be positive")
    if weight_bit_count < 0:
        raise ValueError("weight_bit_count must be nonnegative")
    merkle_total = int(MERKLE_AND_GATES_PER_INPUT_BIT * model_byte_count * 8)
    inference_total = INFERENCE_AND_GATES_PER_WEIGHT_BIT * weight_bit_count
    ratio = merkle_total / inference_total if inference_total else None
    return GateCostReport(
        hash_and_gates_per_input_bit=HASH_AND_GATES_PER_INPUT_BIT,
        merkle_and_gates_per_input_bit=MERKLE_AND_GATES_PER_INPUT_BIT,
        inference_and_gates_per_weight_bit=float(INFERENCE_AND_GATES_PER_WEIGHT_BIT),
        merkle_total_and_gates=merkle_total,
        total_inference_gates=inference_total,
        overhead_ratio=ratio,
    )


def estimate_gates_for_model(model) -> GateCostReport:
    return estimate_gates(
        model_byte_count=len(serialize_model(model)),
        weight_bit_count=32 * parameter_count(model),
    )
