"""Bit-exact message encodings (big-endian) used on the simulated wire."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

# Per-frame overhead added to every payload when computing on-wire size.
# 8-byte probe + 80 = 88 bytes, the default probe size in analytics.
FRAME_OVERHEAD = 80


class MessageKind(IntEnum):
    STUN_REQ = 0x01
    STUN_RESP = 0x02
    PROBE = 0x03
    PROBE_ACK = 0x04
    APP = 0x05
    PMP_REQ = 0x06
    PMP_RESP = 0x07
    RELAY_FWD = 0x08
    ALT_REPLY_REQ = 0x09
    REGISTER = 0x0A
    EXCHANGE = 0x0B
    ACK_ACK = 0x0C
    EXCHANGE_RESP = 0x0D


class WireError(ValueError):
    pass


class AltMode(IntEnum):
    SAME = 0
    ALT_PORT = 1
    ALT_HOST = 2


class PmpStatus(IntEnum):
    OK = 0
    UNSUPPORTED = 1
    NO_RESOURCES = 2


class ExchangeStatus(IntEnum):
    OK = 0
    UNKNOWN_PEER = 1


_EP = struct.Struct(">IH")


def _ep(host: int, port: int) -> bytes:
    return _EP.pack(host, port)


def _check(data: bytes, kind: MessageKind, size: int | None = None, min_size: int | None = None):
    if not data or data[0] != kind:
        raise WireError(f"expected {kind.name}")
    if size is not None and len(data) != size:
        raise WireError(f"{kind.name}: expected {size} bytes, got {len(data)}")
    if min_size is not None and len(data) < min_size:
        raise WireError(f"{kind.name}: truncated")


def stun_req() -> bytes:
    return bytes([MessageKind.STUN_REQ])


def stun_resp(host: int, port: int) -> bytes:
    return bytes([MessageKind.STUN_RESP]) + _ep(host, port)


def decode_stun_resp(data: bytes) -> tuple[int, int]:
    _check(data, MessageKind.STUN_RESP, 7)
    return _EP.unpack_from(data, 1)


def alt_reply_req(mode: AltMode, target: tuple[int, int] | None = None) -> bytes:
    """ALT_REPLY_REQ. The optional target is appended when one server
    forwards the request to its partner."""
    out = bytes([MessageKind.ALT_REPLY_REQ, mode])
    if target is not None:
        out += _ep(*target)
    return out


def decode_alt_reply_req(data: bytes) -> tuple[AltMode, tuple[int, int] | None]:
    _check(data, MessageKind.ALT_REPLY_REQ)
    if len(data) == 2:
        return AltMode(data[1]), None
    if len(data) == 8:
        return AltMode(data[1]), _EP.unpack_from(data, 2)
    raise WireError("ALT_REPLY_REQ: bad length")


def probe(nonce: bytes, kind: MessageKind = MessageKind.PROBE) -> bytes:
    if len(nonce) != 8:
        raise WireError("nonce must be 8 bytes")
    if kind not in (MessageKind.PROBE, MessageKind.PROBE_ACK, MessageKind.ACK_ACK):
        raise WireError("not a probe kind")
    return bytes([kind]) + nonce


def decode_probe(data: bytes) -> tuple[MessageKind, bytes]:
    if len(data) != 9 or data[0] not in (MessageKind.PROBE, MessageKind.PROBE_ACK, MessageKind.ACK_ACK):
        raise WireError("not a probe message")
    return MessageKind(data[0]), bytes(data[1:])


def app(data: bytes = b"") -> bytes:
    return bytes([MessageKind.APP]) + data


_PMP_REQ = struct.Struct(">BHHI")
_PMP_RESP = struct.Struct(">BBHI")


def pmp_req(internal_port: int, requested_port: int, lifetime_s: int) -> bytes:
    return _PMP_REQ.pack(MessageKind.PMP_REQ, internal_port, requested_port, lifetime_s)


def decode_pmp_req(data: bytes) -> tuple[int, int, int]:
    _check(data, MessageKind.PMP_REQ, _PMP_REQ.size)
    return _PMP_REQ.unpack(data)[1:]


def pmp_resp(status: PmpStatus, granted_port: int, lifetime_s: int) -> bytes:
    return _PMP_RESP.pack(MessageKind.PMP_RESP, status, granted_port, lifetime_s)


def decode_pmp_resp(data: bytes) -> tuple[PmpStatus, int, int]:
    _check(data, MessageKind.PMP_RESP, _PMP_RESP.size)
    _, status, port, life = _PMP_RESP.unpack(data)
    return PmpStatus(status), port, life


def relay_fwd(src: tuple[int, int], dst: tuple[int, int], payload: bytes) -> bytes:
    """RELAY_FWD wrapping an inner datagram: src(6) + dst(6) + payload."""
    return bytes([MessageKind.RELAY_FWD]) + _ep(*src) + _ep(*dst) + payload


def decode_relay_fwd(data: bytes) -> tuple[tuple[int, int], tuple[int, int], bytes]:
    _check(data, MessageKind.RELAY_FWD, min_size=13)
    return _EP.unpack_from(data, 1), _EP.unpack_from(data, 7), bytes(data[13:])


@dataclass(frozen=True)
class CandidateWire:
    local: tuple[int, int]
    reflexive: tuple[int, int] | None
    rtt_us: int = 0


_CAND = struct.Struct(">IHBIHI")


def encode_candidates(c: CandidateWire) -> bytes:
    rh, rp = c.reflexive or (0, 0)
    return _CAND.pack(c.local[0], c.local[1], 1 if c.reflexive else 0, rh, rp, c.rtt_us)


def decode_candidates(data: bytes, offset: int = 0) -> CandidateWire:
    lh, lp, has, rh, rp, rtt = _CAND.unpack_from(data, offset)
    return CandidateWire((lh, lp), (rh, rp) if has else None, rtt)


CANDIDATE_SIZE = _CAND.size


def register(peer_id: bytes, cand: CandidateWire) -> bytes:
    if len(peer_id) != 8:
        raise WireError("peer id must be 8 bytes")
    return bytes([MessageKind.REGISTER]) + peer_id + encode_candidates(cand)


def decode_register(data: bytes) -> tuple[bytes, CandidateWire]:
    _check(data, MessageKind.REGISTER, 9 + CANDIDATE_SIZE)
    return bytes(data[1:9]), decode_candidates(data, 9)


def exchange(requester: bytes, target: bytes) -> bytes:
    return bytes([MessageKind.EXCHANGE]) + requester + target


def decode_exchange(data: bytes) -> tuple[bytes, bytes]:
    _check(data, MessageKind.EXCHANGE, 17)
    return bytes(data[1:9]), bytes(data[9:17])


_START = struct.Struct(">Q")


def exchange_resp(status: ExchangeStatus, target: bytes, cand: CandidateWire | None = None,
                  start_us: int = 0) -> bytes:
    body = encode_candidates(cand) if cand else bytes(CANDIDATE_SIZE)
    return bytes([MessageKind.EXCHANGE_RESP, status]) + target + body + _START.pack(start_us)


def decode_exchange_resp(data: bytes) -> tuple[ExchangeStatus, bytes, CandidateWire, int]:
    _check(data, MessageKind.EXCHANGE_RESP, 2 + 8 + CANDIDATE_SIZE + 8)
    status = ExchangeStatus(data[1])
    target = bytes(data[2:10])
    cand = decode_candidates(data, 10)
    (start,) = _START.unpack_from(data, 10 + CANDIDATE_SIZE)
    return status, target, cand, start
