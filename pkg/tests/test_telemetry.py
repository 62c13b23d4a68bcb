import socket
import struct
import threading
import zlib

import numpy as np
import pytest

from src.core.types import ImuSample, OrientationState
from src.errors import (
    IntegrityError,
    PacketLengthError,
    ProtocolError,
    TelemetryError,
    TransportError,
    VersionError,
)
from src.services.recording_service import load_session, record_session
from src.services.telemetry_service import (
    PACKET_SIZE,
    DropOldestQueue,
    StreamStats,
    StreamTracker,
    TelemetryListener,
    decode_packet,
    encode_packet,
    open_udp_socket,
    stream_udp,
)
from tests.helpers import make_sample, static_stream


def _f32(values):
    return tuple(np.asarray(values, dtype=np.float32).tolist())


def _random_pairs(count, seed):
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(count):
        t_ms = int(rng.integers(0, 2 ** 40))
        sample = ImuSample(
            t_ms=t_ms,
            accel=_f32(rng.uniform(-16.0, 16.0, 3)),
            gyro=_f32(rng.uniform(-2000.0, 2000.0, 3)),
            seq=int(rng.integers(0, 2 ** 32)),
        )
        orientation = None
        if i % 2 == 0:
            roll, pitch, yaw = _f32(rng.uniform(-179.5, 179.5, 3))
            orientation = OrientationState(roll_deg=roll, pitch_deg=pitch, yaw_deg=yaw, t_ms=t_ms)
        pairs.append((sample, orientation))
    return pairs


def _packet(magic=b"EQLV", version=1, seq=1, t_ms=10, values=(0.0, 1.0, 0.0, 0.0, 0.0, 0.0)):
    body = struct.pack("<4sBIQ9f8x", magic, version, seq, t_ms, *values, *(float("nan"),) * 3)
    return body + struct.pack("<I", zlib.crc32(body))


def test_packet_is_65_bytes():
    assert PACKET_SIZE == 65
    assert len(encode_packet(make_sample(0))) == 65


def test_encode_decode_identity():
    for sample, orientation in _random_pairs(10_000, seed=4):
        assert decode_packet(encode_packet(sample, orientation)) == (sample, orientation)


def test_every_single_bit_flip_is_rejected():
    accepted = []
    for sample, orientation in _random_pairs(1_000, seed=9):
        packet = bytearray(encode_packet(sample, orientation))
        for bit in range(PACKET_SIZE * 8):
            packet[bit // 8] ^= 1 << (bit % 8)
            try:
                decode_packet(bytes(packet))
                accepted.append((sample.seq, bit))
            except TelemetryError:
                pass
            packet[bit // 8] ^= 1 << (bit % 8)
    assert accepted == []


def test_decode_names_the_failed_check():
    good = _packet()
    with pytest.raises(PacketLengthError):
        decode_packet(good[:-1])
    with pytest.raises(ProtocolError):
        decode_packet(_packet(magic=b"XXXX"))
    corrupted = bytearray(good)
    corrupted[-1] ^= 0xFF
    with pytest.raises(IntegrityError):
        decode_packet(bytes(corrupted))
    with pytest.raises(VersionError):
        decode_packet(_packet(version=2))
    with pytest.raises(ProtocolError):
        decode_packet(_packet(values=(20.0, 1.0, 0.0, 0.0, 0.0, 0.0)))


def test_random_bytes_never_decode():
    rng = np.random.default_rng(11)
    tracker = StreamTracker()
    lengths = [0, 1, PACKET_SIZE - 1, PACKET_SIZE, PACKET_SIZE + 1, *rng.integers(0, 512, 1995).tolist()]
    for length in lengths:
        assert tracker.observe(rng.bytes(int(length))) is None
    assert tracker.stats.packets_received == 0
    assert tracker.stats.packets_rejected == len(lengths)


def test_largest_sequence_number_survives_the_wire():
    sample = make_sample(10, seq=0xFFFFFFFF)
    assert decode_packet(encode_packet(sample))[0].seq == 0xFFFFFFFF


def test_tracker_counts_gaps_reorders_and_rejects():
    tracker = StreamTracker()
    for seq in (0, 1, 2, 5, 4, 4):
        assert tracker.observe(encode_packet(make_sample(seq * 10, seq=seq))) is not None
    assert tracker.observe(b"garbage") is None
    stats = tracker.stats
    assert stats.packets_received == 6
    assert stats.packets_dropped == 2
    assert stats.packets_reordered == 2
    assert stats.packets_rejected == 1
    assert stats.rejects_by_check == {"length": 1}


def test_drop_oldest_queue_counts_evictions():
    stats = StreamStats()
    q = DropOldestQueue(2, stats)
    for item in range(5):
        q.put(item)
    assert stats.packets_overflowed == 3
    assert [q.get(timeout=0.1), q.get(timeout=0.1)] == [3, 4]


def test_bind_failure_is_a_transport_error():
    with pytest.raises(TransportError):
        open_udp_socket(70000, "127.0.0.1")
    with pytest.raises(TransportError):
        open_udp_socket(0, "203.0.113.1")


def test_loopback_stream_is_clean():
    samples = static_stream(1000)
    listener = TelemetryListener(port=0, host="127.0.0.1", timeout_ms=500).start()
    sender = threading.Thread(target=stream_udp, args=(samples, "127.0.0.1", listener.port, 20.0))
    sender.start()
    received = [sample for sample, _ in listener]
    sender.join()
    assert received == samples
    assert listener.stats.packets_received == 1000
    assert listener.stats.packets_dropped == 0
    assert listener.stats.packets_rejected == 0


def test_injected_corruption_is_counted():
    listener = TelemetryListener(port=0, host="127.0.0.1", timeout_ms=400).start()
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
        for i in range(30):
            packet = bytearray(encode_packet(make_sample(i * 10, seq=i)))
            if i % 3 == 0:
                packet[20] ^= 0x01
            sock.sendto(bytes(packet), ("127.0.0.1", listener.port))
    received = list(listener)
    assert len(received) == 20
    assert listener.stats.packets_rejected == 10
    assert listener.stats.rejects_by_check == {"crc": 10}


def test_listener_survives_garbage_datagrams():
    rng = np.random.default_rng(12)
    listener = TelemetryListener(port=0, host="127.0.0.1", timeout_ms=400).start()
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
        for length in rng.integers(0, 256, 300).tolist():
            sock.sendto(rng.bytes(int(length)), ("127.0.0.1", listener.port))
        sock.sendto(rng.bytes(PACKET_SIZE), ("127.0.0.1", listener.port))
    assert list(listener) == []
    assert listener.stats.packets_received == 0
    assert listener.stats.packets_rejected == 301


def test_record_replay_is_byte_idempotent(tmp_path):
    ordered = [ImuSample(t_ms=i * 10, accel=s.accel, gyro=s.gyro, seq=i)
               for i, (s, _) in enumerate(_random_pairs(200, seed=2))]
    first = tmp_path / "first.csv"
    second = tmp_path / "second.csv"
    recording = record_session(ordered, str(first))
    loaded = load_session(str(first))
    record_session(loaded.samples, str(second), loaded.metadata)
    assert loaded.samples == recording.samples
    assert first.read_bytes() == second.read_bytes()
