"""Socket client and reference server for the denoiser bridge protocol.

The wire format lives in ``diffusion`` (length-prefixed binary frames); this
module moves those frames over TCP. ``BridgeOracle`` is a DenoiserOracle
that forwards sequences to a remote denoiser and validates every response;
``EchoServer`` is the in-process reference endpoint (returns epsilon = 0,
variance = 0 with matching shapes) used by the protocol self-test.
"""

from __future__ import annotations

import socket
import struct
import threading
from typing import Callable

import numpy as np

from .diffusion import (DenoiserOutput, pack_request, pack_response,
                        unpack_request, unpack_response)
from .errors import BridgeConnectionError, BridgeTimeoutError, ProtocolError

MAX_MESSAGE = 1 << 31


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ProtocolError("connection closed mid-message")
        buf.extend(chunk)
    return bytes(buf)


def read_message(sock: socket.socket) -> bytes:
    """Read one length-prefixed payload from the stream."""
    (length,) = struct.unpack("<I", _recv_exact(sock, 4))
    if length > MAX_MESSAGE:
        raise ProtocolError(f"message length {length} exceeds limit")
    return _recv_exact(sock, length)


class BridgeOracle:
    """DenoiserOracle forwarding sequences to a remote endpoint.

    One connection per oracle, opened lazily and re-opened after errors.
    Responses are validated for magic/version, frame count, and per-frame
    shape against the request before being returned.
    """

    def __init__(self, address: str, timeout: float = 30.0):
        host, _, port = address.rpartition(":")
        if not host or not port.isdigit():
            raise BridgeConnectionError(f"bridge address must be host:port, got {address!r}")
        self.host, self.port = host, int(port)
        self.timeout = timeout
        self._sock: socket.socket | None = None

    def _connect(self) -> socket.socket:
        if self._sock is None:
            try:
                self._sock = socket.create_connection((self.host, self.port),
                                                      timeout=self.timeout)
            except OSError as e:
                raise BridgeConnectionError(
                    f"cannot reach denoiser bridge at {self.host}:{self.port}: {e}") from e
        return self._sock

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def __call__(self, frames, condition, t, direction, cells=None) -> list[DenoiserOutput]:
        request = pack_request(direction, t, condition, frames)
        try:
            sock = self._connect()
            sock.sendall(request)
            payload = read_message(sock)
        except socket.timeout as e:
            self.close()
            raise BridgeTimeoutError(
                f"denoiser bridge timed out after {self.timeout}s") from e
        except ProtocolError:
            self.close()
            raise
        except OSError as e:
            self.close()
            raise BridgeConnectionError(f"bridge connection failed: {e}") from e

        outputs = unpack_response(payload)
        if len(outputs) != len(frames):
            raise ProtocolError(
                f"bridge returned {len(outputs)} frames, expected {len(frames)}")
        for i, (frame, out) in enumerate(zip(frames, outputs)):
            if out.epsilon.shape != np.asarray(frame).shape:
                raise ProtocolError(
                    f"bridge frame {i} has shape {out.epsilon.shape}, "
                    f"expected {np.asarray(frame).shape}")
        return outputs


def bridge_oracle(address: str, timeout: float = 30.0) -> BridgeOracle:
    return BridgeOracle(address, timeout)


class EchoServer:
    """Reference bridge endpoint: answers every request with zero epsilon and
    zero variance of matching shapes. Malformed requests close the connection.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 respond: Callable[[list[np.ndarray]], bytes] | None = None):
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen()
        self.address = f"{host}:{self._listener.getsockname()[1]}"
        self._respond = respond
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._serve, daemon=True)

    def start(self) -> "EchoServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        self._listener.close()

    def __enter__(self) -> "EchoServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def _serve(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            threading.Thread(target=self._handle, args=(conn,), daemon=True).start()

    def _handle(self, conn: socket.socket) -> None:
        with conn:
            while True:
                try:
                    payload = read_message(conn)
                    _, _, _, frames = unpack_request(payload)
                except (ProtocolError, OSError):
                    return                          # reject by closing
                if self._respond is not None:
                    reply = self._respond(frames)
                else:
                    reply = pack_response([
                        DenoiserOutput(epsilon=np.zeros_like(f), variance=np.zeros_like(f))
                        for f in frames])
                try:
                    conn.sendall(reply)
                except OSError:
                    return


def bridge_self_test(address: str, timeout: float = 10.0) -> list[dict]:
    """Protocol conformance checks against an endpoint. Returns one record
    per check: {name, passed, detail}."""
    checks = []

    def record(name: str, fn: Callable[[], str]):
        try:
            detail = fn()
            checks.append({"name": name, "passed": True, "detail": detail})
        except Exception as e:
            checks.append({"name": name, "passed": False, "detail": f"{type(e).__name__}: {e}"})

    rng = np.random.default_rng(0)
    batch = [rng.standard_normal((40, 72, 4)).astype(np.float32) for _ in range(16)]

    def check_serialization() -> str:
        blob = pack_request("spatial", 940, 3, batch)
        direction, t, cond, frames = unpack_request(blob[4:])
        if (direction, t, cond) != ("spatial", 940, 3):
            raise ProtocolError("header fields did not round-trip")
        for a, b in zip(batch, frames):
            if not np.array_equal(a, b):
                raise ProtocolError("frame payload not bit-identical after round trip")
        return f"{len(batch)} frames of {batch[0].shape} round-tripped bit-exactly"

    def check_endpoint() -> str:
        oracle = BridgeOracle(address, timeout=timeout)
        try:
            outs = oracle(batch, 3, 940, "temporal")
        finally:
            oracle.close()
        if any(np.any(o.epsilon) or np.any(o.variance) for o in outs):
            raise ProtocolError("reference endpoint should return zeros")
        return f"endpoint answered {len(outs)} frames with matching shapes"

    def check_malformed_rejected() -> str:
        host, _, port = address.rpartition(":")
        with socket.create_connection((host, int(port)), timeout=timeout) as sock:
            bad = b"XXXX" + b"\x00" * 14
            sock.sendall(struct.pack("<I", len(bad)) + bad)
            try:
                data = read_message(sock)
            except ProtocolError:
                return "endpoint closed the connection on a bad magic"
            raise ProtocolError(f"endpoint answered a malformed request with {len(data)} bytes")

    def check_wrong_shape_rejected() -> str:
        good = pack_response([DenoiserOutput(epsilon=np.zeros((2, 2, 1), np.float32),
                                             variance=np.zeros((2, 2, 1), np.float32))])
        outs = unpack_response(good[4:])
        if outs[0].epsilon.shape != (2, 2, 1):
            raise ProtocolError("baseline response failed to parse")
        mangled = pack_response([DenoiserOutput(epsilon=np.zeros((2, 2, 1), np.float32),
                                                variance=np.zeros((2, 3, 1), np.float32))])
        try:
            unpack_response(mangled[4:])
        except ProtocolError:
            return "mismatched epsilon/variance shapes rejected"
        raise ProtocolError("parser accepted mismatched shapes")

    record("serialization_round_trip", check_serialization)
    record("endpoint_round_trip", check_endpoint)
    record("malformed_header_rejected", check_malformed_rejected)
    record("wrong_shape_rejected", check_wrong_shape_rejected)
    return checks
