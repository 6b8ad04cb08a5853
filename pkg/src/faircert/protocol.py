"""Wire protocol and role state machines.

Framing: every message is length (32-bit little-endian, counting the type
byte plus payload) | type (1 byte) | payload. The same framing runs over
in-process queue channels and TCP sockets, so transcripts are byte-identical
across transports.

Topology: the trusted dealer is its own endpoint with one channel per party.
Private inputs (the server's model bytes, the client's query) travel only on
dealer channels, which is what makes the privacy claims structural: the
regulator never holds a frame with the model, the server never holds a frame
with the query.

Certification: after a local sample-count precheck (which, on failure, ends
the run before the server learns anything), the regulator announces the spec
and only the total sample count, both parties feed the certification
circuit, and the regulator turns a favourable fair-bit into a signed
certificate over the model digest the circuit reported. In augmented mode
the regulator first commits to the augmentor parameters (seed withheld) in
the request, the server commits to its dealer input by echoing that frame's
digest, and only then is the 8-byte master seed revealed.

Inference: the server presents its certificate before the compute; the
client then checks the signature against the digest of the model that was
actually evaluated and against the exact parameters the client demanded.
"""

from __future__ import annotations

import hashlib
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass
from typing import Callable

from .augmentor import AugmentorConfig, CONFIG_BYTES, SEED_BYTES
from .crypto import (
    Certificate,
    KeyPair,
    MalformedCertificateError,
    certificate_message,
    decode_fairness_spec,
    encode_fairness_spec,
    key_id,
    verify,
)
from .dealer import (
    CIRCUIT_CERT,
    CIRCUIT_INFER,
    FscSession,
    PARTY_CHECKER,
    PARTY_SERVER,
    STATE_ABORTED,
    encode_query,
    encode_test_bundle,
)
from .fairness import FairnessMetric, FairnessSpec, min_samples
from .model import Dataset, ModelSpec, canonical_order, serialize_model

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 1 << 24

FRAME_HELLO = 0x01
FRAME_CERT_ID = 0x02
FRAME_CERT_REQUEST = 0x03
FRAME_COMPUTE_INPUT = 0x04
FRAME_COMPUTE_RESULT = 0x05
FRAME_CERTIFICATE = 0x06
FRAME_SEED_REVEAL = 0x07
FRAME_INFER_REQUEST = 0x08
FRAME_INFER_RESULT = 0x09
FRAME_REJECT = 0x0A
FRAME_ABORT = 0x0B

_KNOWN_FRAMES = frozenset(range(FRAME_HELLO, FRAME_ABORT + 1))

ROLE_REGULATOR = 1
ROLE_SERVER = 2
ROLE_CLIENT = 3
ROLE_DEALER = 4

REASON_NOT_FAIR = "NOT_FAIR"
REASON_SIG_INVALID = "SIG_INVALID"
REASON_SPEC_MISMATCH = "SPEC_MISMATCH"
REASON_PRECHECK_FAILED = "PRECHECK_FAILED"
REASON_FSC_ABORT = "FSC_ABORT"

_REJECT_CODES = {REASON_NOT_FAIR: 1, REASON_SIG_INVALID: 2, REASON_SPEC_MISMATCH: 3}
_REJECT_BY_CODE = {v: k for k, v in _REJECT_CODES.items()}

DEFAULT_TIMEOUT = 30.0


class ProtocolError(Exception):
    pass


class ChannelClosed(Exception):
    pass


@dataclass(frozen=True)
class Frame:
    type: int
    payload: bytes

    def encode(self) -> bytes:
        return struct.pack("<I", len(self.payload) + 1) + bytes([self.type]) + self.payload


def decode_frame(data: bytes) -> Frame:
    if len(data) < 5:
        raise ProtocolError("frame shorter than its fixed header")
    (length,) = struct.unpack_from("<I", data, 0)
    if length != len(data) - 4:
        raise ProtocolError("frame length field disagrees with the body")
    ftype = data[4]
    if ftype not in _KNOWN_FRAMES:
        raise ProtocolError(f"unknown frame type 0x{ftype:02x}")
    return Frame(type=ftype, payload=data[5:])


class QueueChannel:
    """One end of an in-process duplex channel carrying encoded frames."""

    def __init__(self, send_q: "queue.Queue", recv_q: "queue.Queue", timeout: float):
        self._send_q = send_q
        self._recv_q = recv_q
        self._timeout = timeout
        self._closed = False

    def send_frame(self, frame: Frame) -> None:
        if self._closed:
            raise ChannelClosed("channel closed")
        self._send_q.put(frame.encode())

    def recv_frame(self) -> Frame:
        try:
            data = self._recv_q.get(timeout=self._timeout)
        except queue.Empty:
            raise ProtocolError("timed out waiting for a frame") from None
        if data is None:
            raise ChannelClosed("peer closed the channel")
        return decode_frame(data)

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._send_q.put(None)


def channel_pair(timeout: float = DEFAULT_TIMEOUT) -> tuple[QueueChannel, QueueChannel]:
    a_to_b: "queue.Queue" = queue.Queue()
    b_to_a: "queue.Queue" = queue.Queue()
    return (
        QueueChannel(a_to_b, b_to_a, timeout),
        QueueChannel(b_to_a, a_to_b, timeout),
    )


class SocketChannel:
    """Frame transport over a connected TCP socket."""

    def __init__(self, sock: socket.socket, timeout: float = DEFAULT_TIMEOUT):
        self._sock = sock
        self._sock.settimeout(timeout)

    def _recv_exact(self, n: int) -> bytes:
        buf = b""
        while len(buf) < n:
            try:
                chunk = self._sock.recv(n - len(buf))
            except socket.timeout:
                raise ProtocolError("timed out waiting for a frame") from None
            except OSError:
                raise ChannelClosed("socket error") from None
            if not chunk:
                if buf:
                    raise ProtocolError("connection dropped mid-frame")
                raise ChannelClosed("peer closed the connection")
            buf += chunk
        return buf

    def send_frame(self, frame: Frame) -> None:
        try:
            self._sock.sendall(frame.encode())
        except OSError:
            raise ChannelClosed("socket error") from None

    def recv_frame(self) -> Frame:
        header = self._recv_exact(4)
        (length,) = struct.unpack("<I", header)
        if length < 1 or length > MAX_FRAME_BYTES:
            raise ProtocolError(f"implausible frame length {length}")
        body = self._recv_exact(length)
        return decode_frame(header + body)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


class RecordingChannel:
    """Wraps a channel and keeps the exact frame bytes in both directions."""

    def __init__(self, inner):
        self._inner = inner
        self.sent: list[bytes] = []
        self.received: list[bytes] = []

    def send_frame(self, frame: Frame) -> None:
        self._inner.send_frame(frame)
        self.sent.append(frame.encode())

    def recv_frame(self) -> Frame:
        frame = self._inner.recv_frame()
        self.received.append(frame.encode())
        return frame

    def close(self) -> None:
        self._inner.close()

    def wire_transcript(self) -> bytes:
        """Sent bytes in order; stable across runs for fixed seeds."""
        return b"".join(self.sent)


ChannelFactory = Callable[[], object]


def exchange_hello(channel, my_role: int) -> int:
    """Mutual role/version announcement; returns the peer's role id."""
    channel.send_frame(Frame(FRAME_HELLO, struct.pack("<BH", my_role, PROTOCOL_VERSION)))
    frame = channel.recv_frame()
    if frame.type != FRAME_HELLO or len(frame.payload) != 3:
        raise ProtocolError("expected a hello frame")
    role, version = struct.unpack("<BH", frame.payload)
    if version != PROTOCOL_VERSION:
        channel.send_frame(Frame(FRAME_ABORT, b""))
        raise ProtocolError(f"protocol version mismatch ({version} != {PROTOCOL_VERSION})")
    return role


def publish_key(channel, keypair: KeyPair) -> None:
    channel.send_frame(Frame(FRAME_CERT_ID, keypair.verification_key))


def receive_key(channel) -> bytes:
    frame = channel.recv_frame()
    if frame.type != FRAME_CERT_ID or len(frame.payload) != 32:
        raise ProtocolError("expected a key announcement frame")
    return frame.payload


def encode_cert_request(
    spec: FairnessSpec, total_samples: int, aug_public: bytes | None
) -> bytes:
    out = encode_fairness_spec(spec) + struct.pack("<I", total_samples)
    if aug_public is None:
        return out + b"\x00"
    if len(aug_public) != CONFIG_BYTES:
        raise ValueError("augmentor config block must be 16 bytes")
    return out + b"\x01" + aug_public


def decode_cert_request(payload: bytes) -> tuple[FairnessSpec, int, bytes | None]:
    spec, offset = decode_fairness_spec(payload, 0)
    try:
        (total,) = struct.unpack_from("<I", payload, offset)
    except struct.error as exc:
        raise ProtocolError("truncated certification request") from exc
    offset += 4
    if offset >= len(payload):
        raise ProtocolError("certification request missing its mode byte")
    mode = payload[offset]
    offset += 1
    if mode == 0:
        if offset != len(payload):
            raise ProtocolError("trailing bytes after a private-mode request")
        return spec, total, None
    if mode == 1:
        block = payload[offset:]
        if len(block) != CONFIG_BYTES:
            raise ProtocolError("augmented request needs a 16-byte config block")
        return spec, total, block
    raise ProtocolError(f"unknown certification mode {mode}")


@dataclass(frozen=True)
class CertFailure:
    reason: str


@dataclass(frozen=True)
class AcceptedPrediction:
    label: int
    model_digest: bytes


@dataclass(frozen=True)
class Reject:
    reason: str


def _reject_frame(reason: str) -> Frame:
    return Frame(FRAME_REJECT, bytes([_REJECT_CODES[reason]]))


def _parse_reject(frame: Frame) -> str:
    if len(frame.payload) != 1 or frame.payload[0] not in _REJECT_BY_CODE:
        raise ProtocolError("malformed reject frame")
    return _REJECT_BY_CODE[frame.payload[0]]


class Regulator:
    """Holds the signing key, the private test set, and what to certify."""

    def __init__(
        self,
        keypair: KeyPair,
        dataset: Dataset,
        spec: FairnessSpec,
        aug: AugmentorConfig | None = None,
    ):
        if spec.augmented and aug is None:
            raise ValueError("augmented spec requires an augmentor config")
        if not spec.augmented and aug is not None:
            raise ValueError("augmentor config given but the spec is private-mode")
        self.keypair = keypair
        self.dataset = canonical_order(dataset)
        self.spec = spec
        self.aug = aug
        self.last_commitment: bytes | None = None

    def required_counts(self) -> tuple[int, tuple[int, ...]]:
        """(needed per cell, observed per cell) with the gap assumed 0."""
        from fractions import Fraction

        needed = min_samples(
            self.spec, Fraction(0), self.dataset.num_groups, self.dataset.num_labels
        )
        if self.spec.metric is FairnessMetric.EO:
            counts = [
                [0] * self.dataset.num_labels for _ in range(self.dataset.num_groups)
            ]
            for s in self.dataset.samples:
                counts[s.group][s.label] += 1
            observed = tuple(c for row in counts for c in row)
        else:
            per_group = [0] * self.dataset.num_groups
            for s in self.dataset.samples:
                per_group[s.group] += 1
            observed = tuple(per_group)
        return needed, observed

    def precheck(self) -> bool:
        needed, observed = self.required_counts()
        return min(observed) >= needed

    def certify(
        self, server_factory: ChannelFactory, dealer_factory: ChannelFactory
    ) -> Certificate | CertFailure:
        if not self.precheck():
            return CertFailure(REASON_PRECHECK_FAILED)
        chan_s = server_factory()
        if exchange_hello(chan_s, ROLE_REGULATOR) != ROLE_SERVER:
            raise ProtocolError("peer did not identify as the server")
        aug_public = self.aug.encode_public() if self.aug is not None else None
        chan_s.send_frame(
            Frame(
                FRAME_CERT_REQUEST,
                encode_cert_request(self.spec, len(self.dataset.samples), aug_public),
            )
        )
        if self.aug is not None:
            frame = chan_s.recv_frame()
            if frame.type != FRAME_COMPUTE_INPUT or len(frame.payload) != 33:
                raise ProtocolError("expected the server's input commitment")
            if frame.payload[0] != CIRCUIT_CERT:
                raise ProtocolError("commitment names the wrong circuit")
            self.last_commitment = frame.payload[1:]
            chan_s.send_frame(Frame(FRAME_SEED_REVEAL, self.aug.master_seed))
        chan_f = dealer_factory()
        if exchange_hello(chan_f, ROLE_REGULATOR) != ROLE_DEALER:
            raise ProtocolError("peer did not identify as the dealer")
        bundle = encode_test_bundle(self.spec, self.dataset, self.aug)
        chan_f.send_frame(Frame(FRAME_COMPUTE_INPUT, bytes([CIRCUIT_CERT]) + bundle))
        result = chan_f.recv_frame()
        if result.type == FRAME_ABORT:
            chan_s.send_frame(Frame(FRAME_ABORT, b""))
            return CertFailure(REASON_FSC_ABORT)
        if result.type != FRAME_COMPUTE_RESULT or len(result.payload) != 33:
            raise ProtocolError("expected the certification result")
        fair, digest = result.payload[0], result.payload[1:]
        if fair == 1:
            from .crypto import issue_certificate

            cert = issue_certificate(self.keypair, digest, self.spec)
            chan_s.send_frame(Frame(FRAME_CERTIFICATE, cert.to_bytes()))
            return cert
        chan_s.send_frame(_reject_frame(REASON_NOT_FAIR))
        return CertFailure(REASON_NOT_FAIR)


class Server:
    """Holds the model; stores the certificate a regulator issues for it."""

    def __init__(self, model: ModelSpec):
        self.model = model
        self.model_bytes = serialize_model(model)
        self.certificate: Certificate | None = None

    def serve_certification(
        self, regulator_channel, dealer_factory: ChannelFactory
    ) -> Certificate | CertFailure:
        if exchange_hello(regulator_channel, ROLE_SERVER) != ROLE_REGULATOR:
            raise ProtocolError("peer did not identify as the regulator")
        request = regulator_channel.recv_frame()
        if request.type != FRAME_CERT_REQUEST:
            raise ProtocolError("expected a certification request")
        _spec, _total, aug_public = decode_cert_request(request.payload)
        chan_f = dealer_factory()
        if exchange_hello(chan_f, ROLE_SERVER) != ROLE_DEALER:
            raise ProtocolError("peer did not identify as the dealer")
        input_frame = Frame(FRAME_COMPUTE_INPUT, bytes([CIRCUIT_CERT]) + self.model_bytes)
        chan_f.send_frame(input_frame)
        if aug_public is not None:
            commitment = hashlib.sha3_256(input_frame.encode()).digest()
            regulator_channel.send_frame(
                Frame(FRAME_COMPUTE_INPUT, bytes([CIRCUIT_CERT]) + commitment)
            )
            reveal = regulator_channel.recv_frame()
            if reveal.type != FRAME_SEED_REVEAL or len(reveal.payload) != SEED_BYTES:
                raise ProtocolError("expected the augmentor seed reveal")
        outcome = regulator_channel.recv_frame()
        if outcome.type == FRAME_CERTIFICATE:
            self.certificate = Certificate.from_bytes(outcome.payload)
            return self.certificate
        if outcome.type == FRAME_REJECT:
            return CertFailure(_parse_reject(outcome))
        if outcome.type == FRAME_ABORT:
            return CertFailure(REASON_FSC_ABORT)
        raise ProtocolError("unexpected certification outcome frame")

    def serve_inference(
        self, client_channel, dealer_factory: ChannelFactory
    ) -> Reject | None:
        """Returns the client's rejection if one arrives; None on success."""
        if self.certificate is None:
            raise ValueError("server holds no certificate to present")
        if exchange_hello(client_channel, ROLE_SERVER) != ROLE_CLIENT:
            raise ProtocolError("peer did not identify as the client")
        request = client_channel.recv_frame()
        if request.type != FRAME_INFER_REQUEST:
            raise ProtocolError("expected an inference request")
        client_channel.send_frame(Frame(FRAME_CERTIFICATE, self.certificate.to_bytes()))
        chan_f = dealer_factory()
        if exchange_hello(chan_f, ROLE_SERVER) != ROLE_DEALER:
            raise ProtocolError("peer did not identify as the dealer")
        chan_f.send_frame(Frame(FRAME_COMPUTE_INPUT, bytes([CIRCUIT_INFER]) + self.model_bytes))
        try:
            final = client_channel.recv_frame()
        except ChannelClosed:
            return None
        if final.type == FRAME_REJECT:
            return Reject(_parse_reject(final))
        if final.type == FRAME_ABORT:
            return Reject(REASON_FSC_ABORT)
        raise ProtocolError("unexpected frame at the end of inference")


class Client:
    """Demands a spec, queries the model, verifies the certificate."""

    def __init__(self, features: tuple[int, ...], verification_key: bytes, spec: FairnessSpec):
        self.features = tuple(features)
        self.verification_key = verification_key
        self.spec = spec

    def infer(
        self, server_factory: ChannelFactory, dealer_factory: ChannelFactory
    ) -> AcceptedPrediction | Reject:
        chan_s = server_factory()
        if exchange_hello(chan_s, ROLE_CLIENT) != ROLE_SERVER:
            raise ProtocolError("peer did not identify as the server")
        chan_s.send_frame(Frame(FRAME_INFER_REQUEST, encode_fairness_spec(self.spec)))
        cert_frame = chan_s.recv_frame()
        if cert_frame.type != FRAME_CERTIFICATE:
            raise ProtocolError("expected the certificate before the compute")
        try:
            cert = Certificate.from_bytes(cert_frame.payload)
        except MalformedCertificateError:
            chan_s.send_frame(_reject_frame(REASON_SIG_INVALID))
            chan_s.close()
            return Reject(REASON_SIG_INVALID)
        chan_f = dealer_factory()
        if exchange_hello(chan_f, ROLE_CLIENT) != ROLE_DEALER:
            raise ProtocolError("peer did not identify as the dealer")
        chan_f.send_frame(
            Frame(FRAME_COMPUTE_INPUT, bytes([CIRCUIT_INFER]) + encode_query(self.features))
        )
        result = chan_f.recv_frame()
        if result.type == FRAME_ABORT:
            chan_s.send_frame(Frame(FRAME_ABORT, b""))
            chan_s.close()
            return Reject(REASON_FSC_ABORT)
        if result.type != FRAME_INFER_RESULT or len(result.payload) != 34:
            raise ProtocolError("expected the inference result")
        (label,) = struct.unpack_from("<H", result.payload, 0)
        digest = result.payload[2:]
        reason = self._check_certificate(cert, digest)
        if reason is not None:
            chan_s.send_frame(_reject_frame(reason))
            chan_s.close()
            return Reject(reason)
        chan_s.close()
        return AcceptedPrediction(label=label, model_digest=digest)

    def _check_certificate(self, cert: Certificate, digest: bytes) -> str | None:
        if cert.spec != self.spec:
            return REASON_SPEC_MISMATCH
        if cert.regulator_key_id != key_id(self.verification_key):
            return REASON_SIG_INVALID
        message = certificate_message(digest, self.spec)
        if not verify(self.verification_key, message, cert.signature):
            return REASON_SIG_INVALID
        return None


def serve_dealer(channel_a, channel_b) -> FscSession:
    """Run one compute session over two party channels (any role order)."""
    by_party: dict[int, object] = {}
    for chan in (channel_a, channel_b):
        role = exchange_hello(chan, ROLE_DEALER)
        party = PARTY_SERVER if role == ROLE_SERVER else PARTY_CHECKER
        if party in by_party:
            raise ProtocolError("both channels claim the same party")
        by_party[party] = chan
    session = FscSession()
    circuit_ids: dict[int, int] = {}
    for party in (PARTY_SERVER, PARTY_CHECKER):
        frame = by_party[party].recv_frame()
        if frame.type != FRAME_COMPUTE_INPUT or not frame.payload:
            raise ProtocolError("expected a compute input frame")
        circuit_ids[party] = frame.payload[0]
        session.input(party, frame.payload[1:])
    for party in (PARTY_SERVER, PARTY_CHECKER):
        session.compute(party, circuit_ids[party])
        if session.state == STATE_ABORTED:
            break
    if session.state == STATE_ABORTED:
        for chan in by_party.values():
            chan.send_frame(Frame(FRAME_ABORT, b""))
        return session
    payload = session.output(PARTY_CHECKER)
    result_type = (
        FRAME_COMPUTE_RESULT if circuit_ids[PARTY_CHECKER] == CIRCUIT_CERT else FRAME_INFER_RESULT
    )
    by_party[PARTY_CHECKER].send_frame(Frame(result_type, payload))
    return session


# In-process orchestration: three endpoints on queue channels, with every
# channel end wrapped in a recorder so tests can audit exactly what moved.


@dataclass
class LocalRun:
    regulator_result: object = None
    server_result: object = None
    client_result: object = None
    session: FscSession | None = None
    recorders: dict | None = None


def _factory_of(channel, used_flag: list) -> ChannelFactory:
    def make():
        used_flag.append(True)
        return channel

    return make


def _run_thread(holder: dict, key: str, fn: Callable) -> threading.Thread:
    def run():
        try:
            holder[key] = fn()
        except ChannelClosed:
            holder[key] = None
        except Exception as exc:  # surfaced by the harness caller
            holder[key] = exc

    t = threading.Thread(target=run, daemon=True)
    t.start()
    return t


def run_certification_local(
    regulator: Regulator, server: Server, timeout: float = DEFAULT_TIMEOUT
) -> LocalRun:
    rs_r, rs_s = channel_pair(timeout)
    sf_s, sf_f = channel_pair(timeout)
    rf_r, rf_f = channel_pair(timeout)
    rec = {
        "reg_to_server": RecordingChannel(rs_r),
        "server_to_reg": RecordingChannel(rs_s),
        "server_to_dealer": RecordingChannel(sf_s),
        "reg_to_dealer": RecordingChannel(rf_r),
    }
    results: dict = {}
    t_dealer = _run_thread(results, "session", lambda: serve_dealer(sf_f, rf_f))
    t_server = _run_thread(
        results,
        "server",
        lambda: server.serve_certification(
            rec["server_to_reg"], _factory_of(rec["server_to_dealer"], [])
        ),
    )
    t_reg = _run_thread(
        results,
        "regulator",
        lambda: regulator.certify(
            _factory_of(rec["reg_to_server"], []), _factory_of(rec["reg_to_dealer"], [])
        ),
    )
    t_reg.join(timeout)
    for chan in (rs_r, rs_s, sf_s, sf_f, rf_r, rf_f):
        chan.close()
    t_server.join(timeout)
    t_dealer.join(timeout)
    for name in ("regulator", "server"):
        if isinstance(results.get(name), Exception):
            raise results[name]
    return LocalRun(
        regulator_result=results.get("regulator"),
        server_result=results.get("server"),
        session=results.get("session") if isinstance(results.get("session"), FscSession) else None,
        recorders=rec,
    )


def run_inference_local(
    client: Client, server: Server, timeout: float = DEFAULT_TIMEOUT
) -> LocalRun:
    cs_c, cs_s = channel_pair(timeout)
    sf_s, sf_f = channel_pair(timeout)
    cf_c, cf_f = channel_pair(timeout)
    rec = {
        "client_to_server": RecordingChannel(cs_c),
        "server_to_client": RecordingChannel(cs_s),
        "server_to_dealer": RecordingChannel(sf_s),
        "client_to_dealer": RecordingChannel(cf_c),
    }
    results: dict = {}
    t_dealer = _run_thread(results, "session", lambda: serve_dealer(sf_f, cf_f))
    t_server = _run_thread(
        results,
        "server",
        lambda: server.serve_inference(
            rec["server_to_client"], _factory_of(rec["server_to_dealer"], [])
        ),
    )
    t_client = _run_thread(
        results,
        "client",
        lambda: client.infer(
            _factory_of(rec["client_to_server"], []), _factory_of(rec["client_to_dealer"], [])
        ),
    )
    t_client.join(timeout)
    for chan in (cs_c, cs_s, sf_s, sf_f, cf_c, cf_f):
        chan.close()
    t_server.join(timeout)
    t_dealer.join(timeout)
    for name in ("client", "server"):
        if isinstance(results.get(name), Exception):
            raise results[name]
    return LocalRun(
        client_result=results.get("client"),
        server_result=results.get("server"),
        session=results.get("session") if isinstance(results.get("session"), FscSession) else None,
        recorders=rec,
    )


# TCP plumbing shared by tests and the CLI.


def open_listener(host: str, port: int) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((host, port))
    sock.listen(4)
    return sock


def accept_channel(listener: socket.socket, timeout: float = DEFAULT_TIMEOUT) -> SocketChannel:
    listener.settimeout(timeout)
    conn, _ = listener.accept()
    return SocketChannel(conn, timeout)


def connect_channel(
    host: str, port: int, timeout: float = DEFAULT_TIMEOUT, retry_for: float = 5.0
) -> SocketChannel:
    deadline = time.monotonic() + retry_for
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
            return SocketChannel(sock, timeout)
        except OSError:
            if time.monotonic() >= deadline:
                raise
            time.sleep(0.05)


def parse_endpoint(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not port.isdigit():
        raise ValueError(f"endpoint {text!r} must be host:port")
    return host or "127.0.0.1", int(port)
