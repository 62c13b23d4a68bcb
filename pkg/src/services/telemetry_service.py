# src/services/telemetry_service.py
"""Vest-to-host UDP telemetry: wire codec, receiver and sender.

Packet layout (little-endian, 65 bytes):

    offset  size  field
    0       4     magic  b"EQLV"
    4       1     version (1)
    5       4     seq    uint32
    9       8     t_ms   uint64
    17      24    ax ay az gx gy gz   float32 (g, deg/s)
    41      12    roll pitch yaw      float32 (deg, NaN when absent)
    53      8     reserved (zero)
    61      4     crc    CRC-32 over bytes 0..60
"""

from __future__ import annotations

import logging
import math
import queue
import socket
import struct
import threading
import time
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional, Tuple

from src import config
from src.core.types import ImuSample, OrientationState, wrap_angle
from src.errors import (
    IntegrityError,
    InvalidArgumentError,
    PacketLengthError,
    ProtocolError,
    TelemetryError,
    TransportError,
    VersionError,
)

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

_BODY = struct.Struct("<4sBIQ9f8x")
_CRC = struct.Struct("<I")
PACKET_SIZE = _BODY.size + _CRC.size
assert PACKET_SIZE == config.PACKET_SIZE

Decoded = Tuple[ImuSample, Optional[OrientationState]]
Sink = Callable[[ImuSample, Optional[OrientationState]], None]


def encode_packet(sample: ImuSample, orientation: Optional[OrientationState] = None) -> bytes:
    if orientation is None:
        angles = (math.nan, math.nan, math.nan)
    else:
        angles = (orientation.roll_deg, orientation.pitch_deg, orientation.yaw_deg)
    body = _BODY.pack(
        config.PACKET_MAGIC,
        config.PACKET_VERSION,
        sample.seq,
        sample.t_ms,
        *sample.accel,
        *sample.gyro,
        *angles,
    )
    return body + _CRC.pack(zlib.crc32(body))


def decode_packet(data: bytes) -> Decoded:
    """Inverse of encode_packet; each failure names the check that failed."""
    if len(data) != PACKET_SIZE:
        raise PacketLengthError(f"length check failed: expected {PACKET_SIZE} bytes, got {len(data)}")
    body = data[:_BODY.size]
    magic, version, seq, t_ms, *values = _BODY.unpack(body)
    if magic != config.PACKET_MAGIC:
        raise ProtocolError(f"magic check failed: {magic!r}")
    (crc,) = _CRC.unpack(data[_BODY.size:])
    if crc != zlib.crc32(body):
        raise IntegrityError(f"crc check failed: packet 0x{crc:08x}, computed 0x{zlib.crc32(body):08x}")
    if version != config.PACKET_VERSION:
        raise VersionError(f"version check failed: {version}")

    try:
        sample = ImuSample(t_ms=t_ms, accel=tuple(values[0:3]), gyro=tuple(values[3:6]), seq=seq)
        angles = values[6:9]
        orientation = None
        if not any(math.isnan(a) for a in angles):
            roll, pitch, yaw = (wrap_angle(a) for a in angles)
            orientation = OrientationState(roll_deg=roll, pitch_deg=pitch, yaw_deg=yaw, t_ms=t_ms)
    except InvalidArgumentError as e:
        raise ProtocolError(f"value check failed: {e}") from e
    return sample, orientation


@dataclass
class StreamStats:
    packets_received: int = 0
    packets_dropped: int = 0
    packets_reordered: int = 0
    packets_rejected: int = 0
    packets_overflowed: int = 0
    rejects_by_check: dict = field(default_factory=dict)

    def summary(self) -> str:
        return (f"received={self.packets_received} dropped={self.packets_dropped} "
                f"reordered={self.packets_reordered} rejected={self.packets_rejected} "
                f"overflowed={self.packets_overflowed}")


class StreamTracker:
    """Per-datagram bookkeeping of sequence gaps, reorders and rejects."""

    def __init__(self, stats: Optional[StreamStats] = None):
        self.stats = stats or StreamStats()
        self._max_seq: Optional[int] = None

    def observe(self, datagram: bytes) -> Optional[Decoded]:
        try:
            sample, orientation = decode_packet(datagram)
        except TelemetryError as e:
            self.stats.packets_rejected += 1
            self.stats.rejects_by_check[e.check] = self.stats.rejects_by_check.get(e.check, 0) + 1
            logger.debug("TELEMETRY_REJECT check=%s reason=%s", e.check, e)
            return None

        self.stats.packets_received += 1
        seq = sample.seq
        if self._max_seq is None:
            self._max_seq = seq
        elif seq > self._max_seq:
            self.stats.packets_dropped += seq - self._max_seq - 1
            self._max_seq = seq
        else:
            # duplicates count as reorders; the sink decides whether to keep them
            self.stats.packets_reordered += 1
        return sample, orientation


def open_udp_socket(port: int, host: str = "0.0.0.0") -> socket.socket:
    try:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        sock.bind((host, port))
        sock.settimeout(config.RECEIVE_POLL_SECONDS)
    except (OSError, OverflowError) as e:
        raise TransportError(f"cannot bind UDP {host}:{port}: {e}") from e
    return sock


def receive_stream(sock: socket.socket, sink: Sink, timeout_ms: Optional[int] = None,
                   stop_event: Optional[threading.Event] = None,
                   stats: Optional[StreamStats] = None) -> StreamStats:
    """Forward valid packets to sink in arrival order until stopped.

    Stops on stop_event, on KeyboardInterrupt, or after timeout_ms without
    any datagram. Malformed datagrams are counted, never raised.
    """
    tracker = StreamTracker(stats)
    last_activity = time.monotonic()
    try:
        while stop_event is None or not stop_event.is_set():
            try:
                datagram, _addr = sock.recvfrom(config.RECEIVE_BUFFER_BYTES)
            except socket.timeout:
                if timeout_ms is not None and (time.monotonic() - last_activity) * 1000.0 >= timeout_ms:
                    logger.info("TELEMETRY_IDLE timeout_ms=%s", timeout_ms)
                    break
                continue
            except OSError as e:
                raise TransportError(f"socket failure: {e}") from e
            last_activity = time.monotonic()
            decoded = tracker.observe(datagram)
            if decoded is not None:
                sink(*decoded)
    except KeyboardInterrupt:
        logger.info("TELEMETRY_INTERRUPTED")
    logger.info("TELEMETRY_STATS %s", tracker.stats.summary())
    return tracker.stats


class DropOldestQueue:
    """Bounded FIFO hand-off; a full queue evicts its oldest item."""

    def __init__(self, maxsize: int, stats: StreamStats):
        self._queue: "queue.Queue" = queue.Queue(maxsize=maxsize)
        self._stats = stats
        self._lock = threading.Lock()

    def put(self, item) -> None:
        with self._lock:
            while True:
                try:
                    self._queue.put_nowait(item)
                    return
                except queue.Full:
                    try:
                        self._queue.get_nowait()
                        self._stats.packets_overflowed += 1
                    except queue.Empty:
                        pass

    def get(self, timeout: Optional[float] = None):
        return self._queue.get(timeout=timeout)


_END = object()


class TelemetryListener:
    """Receives on a background thread; iterate to consume decoded samples in order."""

    def __init__(self, port: int = config.UDP_PORT, host: str = "0.0.0.0",
                 timeout_ms: Optional[int] = None, queue_size: int = config.INGEST_QUEUE_SIZE):
        self.stats = StreamStats()
        self.timeout_ms = timeout_ms
        self._sock = open_udp_socket(port, host)
        self._queue = DropOldestQueue(queue_size, self.stats)
        self._stop = threading.Event()
        self._error: Optional[BaseException] = None
        self._thread = threading.Thread(target=self._run, name="telemetry-rx", daemon=True)

    @property
    def port(self) -> int:
        return self._sock.getsockname()[1]

    def start(self) -> "TelemetryListener":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()

    def _run(self) -> None:
        try:
            receive_stream(self._sock, lambda s, o: self._queue.put((s, o)),
                           timeout_ms=self.timeout_ms, stop_event=self._stop, stats=self.stats)
        except BaseException as e:  # surfaced to the consumer
            self._error = e
        finally:
            self._sock.close()
            self._queue.put(_END)

    def __iter__(self) -> Iterator[Decoded]:
        try:
            while True:
                try:
                    item = self._queue.get(timeout=config.RECEIVE_POLL_SECONDS)
                except queue.Empty:
                    continue
                if item is _END:
                    break
                yield item
        except KeyboardInterrupt:
            self.stop()
        self._thread.join(timeout=1.0)
        if self._error is not None:
            raise self._error


def stream_udp(samples: Iterable[ImuSample], host: str, port: int, rate_multiplier: float = 1.0,
               orientations: Optional[Iterable[Optional[OrientationState]]] = None) -> int:
    """Send samples as packets, paced at rate_multiplier x real time (0 = no pacing)."""
    if rate_multiplier < 0:
        raise InvalidArgumentError("rate multiplier must be >= 0")
    orientation_iter = iter(orientations) if orientations is not None else None
    sent = 0
    try:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    except OSError as e:
        raise TransportError(f"cannot open UDP socket: {e}") from e
    with sock:
        start_wall = time.monotonic()
        first_t: Optional[int] = None
        for sample in samples:
            orientation = next(orientation_iter, None) if orientation_iter is not None else None
            if first_t is None:
                first_t = sample.t_ms
            if rate_multiplier > 0:
                due = (sample.t_ms - first_t) / 1000.0 / rate_multiplier
                delay = due - (time.monotonic() - start_wall)
                if delay > 0:
                    time.sleep(delay)
            try:
                sock.sendto(encode_packet(sample, orientation), (host, port))
            except OSError as e:
                raise TransportError(f"send to {host}:{port} failed: {e}") from e
            sent += 1
    logger.info("TELEMETRY_SENT packets=%d target=%s:%d", sent, host, port)
    return sent


__all__ = [
    "PACKET_SIZE",
    "DropOldestQueue",
    "StreamStats",
    "StreamTracker",
    "TelemetryListener",
    "decode_packet",
    "encode_packet",
    "open_udp_socket",
    "receive_stream",
    "stream_udp",
]
