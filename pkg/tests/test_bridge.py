"""Bridge client/server over loopback TCP plus the protocol self-test."""

import socket
import struct

import numpy as np
import pytest

from framematrix.bridge import (BridgeOracle, EchoServer, bridge_oracle,
                                bridge_self_test, read_message)
from framematrix.diffusion import (DenoiserOutput, make_schedule, pack_response,
                                   posterior_step)
from framematrix.errors import (BridgeConnectionError, ProtocolError)
from framematrix.matrix import denoise_sequence


@pytest.fixture()
def echo():
    with EchoServer() as server:
        yield server


def test_echo_roundtrip_returns_zeros(echo):
    oracle = bridge_oracle(echo.address)
    rng = np.random.default_rng(0)
    frames = [rng.standard_normal((4, 6, 3)).astype(np.float32) for _ in range(5)]
    outs = oracle(frames, 7, 321, "temporal")
    assert len(outs) == 5
    for f, o in zip(frames, outs):
        assert o.epsilon.shape == f.shape
        assert not o.epsilon.any() and not o.variance.any()
    oracle.close()


def test_bridge_oracle_matches_local_zero_oracle_in_denoise(echo):
    sched = make_schedule(100)
    rng = np.random.default_rng(1)
    seq = rng.standard_normal((3, 4, 6, 3))
    known = rng.standard_normal(seq.shape)
    mask = np.zeros(seq.shape[:-1], dtype=bool)
    mask[0] = True
    eps = rng.standard_normal(seq.shape)
    xi = rng.standard_normal(seq.shape)
    remote = bridge_oracle(echo.address)
    got = denoise_sequence(seq, known, mask, 60, remote, sched, eps, xi)
    zero = DenoiserOutput(epsilon=np.zeros_like(seq), variance=np.zeros_like(seq))
    want_unknown = posterior_step(seq, zero, 60, sched, xi)
    assert np.array_equal(got[1:], want_unknown[1:])
    remote.close()


def test_wrong_frame_count_rejected():
    def short_response(frames):
        outs = [DenoiserOutput(epsilon=np.zeros_like(f), variance=np.zeros_like(f))
                for f in frames[:-1]]
        return pack_response(outs)

    with EchoServer(respond=short_response) as server:
        oracle = bridge_oracle(server.address)
        frames = [np.zeros((2, 2, 1), dtype=np.float32) for _ in range(3)]
        with pytest.raises(ProtocolError, match="returned 2 frames, expected 3"):
            oracle(frames, 0, 10, "temporal")
        oracle.close()


def test_wrong_shape_rejected():
    def reshaped_response(frames):
        outs = [DenoiserOutput(epsilon=np.zeros((1, 1, 1), np.float32),
                               variance=np.zeros((1, 1, 1), np.float32))
                for _ in frames]
        return pack_response(outs)

    with EchoServer(respond=reshaped_response) as server:
        oracle = bridge_oracle(server.address)
        with pytest.raises(ProtocolError, match="shape"):
            oracle([np.zeros((2, 2, 1), dtype=np.float32)], 0, 10, "temporal")
        oracle.close()


def test_connection_failure_distinct_error():
    oracle = BridgeOracle("127.0.0.1:1")        # nothing listens on port 1
    with pytest.raises(BridgeConnectionError):
        oracle([np.zeros((2, 2, 1), dtype=np.float32)], 0, 10, "temporal")
    with pytest.raises(BridgeConnectionError):
        bridge_oracle("not-an-address")


def test_malformed_request_closes_connection(echo):
    host, port = echo.address.split(":")
    with socket.create_connection((host, int(port)), timeout=5) as sock:
        bad = b"NOPE" + b"\x00" * 20
        sock.sendall(struct.pack("<I", len(bad)) + bad)
        with pytest.raises(ProtocolError):
            read_message(sock)


def test_self_test_all_pass_against_reference(echo):
    checks = bridge_self_test(echo.address)
    names = {c["name"] for c in checks}
    assert names == {"serialization_round_trip", "endpoint_round_trip",
                     "malformed_header_rejected", "wrong_shape_rejected"}
    assert all(c["passed"] for c in checks), checks
