"""Shared builders and the TCP orchestration harness used across test files."""

import threading
from fractions import Fraction

from faircert.crypto import keygen
from faircert.fairness import FairnessMetric, FairnessSpec
from faircert.model import PlantedConfig, generate_planted
from faircert.protocol import (
    ChannelClosed,
    RecordingChannel,
    Regulator,
    Server,
    accept_channel,
    connect_channel,
    open_listener,
    serve_dealer,
)

KEY_SEED = bytes(range(32))

CHEAP_SPEC = FairnessSpec(
    metric=FairnessMetric.ORE, epsilon=Fraction(1, 2), delta=Fraction(1, 5)
)
CHEAP_REQUIRED = 30  # per-group bound for CHEAP_SPEC at gap 0


def quarter_config(rates=(Fraction(0), Fraction(0)), seed=b"\x51" * 8):
    return PlantedConfig(
        cell_weights=(
            (Fraction(1, 4), Fraction(1, 4)),
            (Fraction(1, 4), Fraction(1, 4)),
        ),
        error_rates=rates,
        seed=seed,
    )


def certification_setup(
    group_counts=(CHEAP_REQUIRED, CHEAP_REQUIRED),
    rates=(Fraction(0), Fraction(0)),
    spec=CHEAP_SPEC,
    aug=None,
    seed=b"\x51" * 8,
):
    dataset, model, _ = generate_planted(
        quarter_config(rates=rates, seed=seed), 0, group_counts=group_counts
    )
    regulator = Regulator(keygen(KEY_SEED), dataset, spec, aug)
    return regulator, Server(model), dataset, model


def _capture(results, key, fn):
    def run():
        try:
            results[key] = fn()
        except ChannelClosed:
            results[key] = None
        except Exception as exc:
            results[key] = exc

    t = threading.Thread(target=run, daemon=True)
    t.start()
    return t


def run_certification_tcp(regulator, server, timeout=10.0):
    """Certification over real sockets; exceptions come back as values."""
    dealer_listener = open_listener("127.0.0.1", 0)
    reg_listener = open_listener("127.0.0.1", 0)
    d_port = dealer_listener.getsockname()[1]
    r_port = reg_listener.getsockname()[1]
    recorders = {}
    results = {}

    def record(name, chan):
        recorders[name] = RecordingChannel(chan)
        return recorders[name]

    t_dealer = _capture(
        results,
        "session",
        lambda: serve_dealer(
            accept_channel(dealer_listener, timeout),
            accept_channel(dealer_listener, timeout),
        ),
    )
    t_server = _capture(
        results,
        "server",
        lambda: server.serve_certification(
            record("server_to_reg", connect_channel("127.0.0.1", r_port, timeout)),
            lambda: record(
                "server_to_dealer", connect_channel("127.0.0.1", d_port, timeout)
            ),
        ),
    )
    t_reg = _capture(
        results,
        "regulator",
        lambda: regulator.certify(
            lambda: record("reg_to_server", accept_channel(reg_listener, timeout)),
            lambda: record(
                "reg_to_dealer", connect_channel("127.0.0.1", d_port, timeout)
            ),
        ),
    )
    t_reg.join(timeout + 5)
    # sockets drop in-flight frames on close, so let the peers drain first
    t_server.join(timeout)
    t_dealer.join(timeout)
    for name in ("reg_to_server", "reg_to_dealer", "server_to_reg", "server_to_dealer"):
        if name in recorders:
            recorders[name].close()
    dealer_listener.close()
    reg_listener.close()
    t_server.join(timeout + 5)
    t_dealer.join(timeout + 5)
    results["recorders"] = recorders
    return results


def run_inference_tcp(client, server, timeout=10.0):
    """Inference over real sockets; exceptions come back as values."""
    dealer_listener = open_listener("127.0.0.1", 0)
    server_listener = open_listener("127.0.0.1", 0)
    d_port = dealer_listener.getsockname()[1]
    s_port = server_listener.getsockname()[1]
    recorders = {}
    results = {}

    def record(name, chan):
        recorders[name] = RecordingChannel(chan)
        return recorders[name]

    t_dealer = _capture(
        results,
        "session",
        lambda: serve_dealer(
            accept_channel(dealer_listener, timeout),
            accept_channel(dealer_listener, timeout),
        ),
    )
    t_server = _capture(
        results,
        "server",
        lambda: server.serve_inference(
            record("server_to_client", accept_channel(server_listener, timeout)),
            lambda: record(
                "server_to_dealer", connect_channel("127.0.0.1", d_port, timeout)
            ),
        ),
    )
    t_client = _capture(
        results,
        "client",
        lambda: client.infer(
            lambda: record(
                "client_to_server", connect_channel("127.0.0.1", s_port, timeout)
            ),
            lambda: record(
                "client_to_dealer", connect_channel("127.0.0.1", d_port, timeout)
            ),
        ),
    )
    t_client.join(timeout + 5)
    # sockets drop in-flight frames on close, so let the peers drain first
    t_server.join(timeout)
    t_dealer.join(timeout)
    for chan in recorders.values():
        chan.close()
    dealer_listener.close()
    server_listener.close()
    t_server.join(timeout + 5)
    t_dealer.join(timeout + 5)
    results["recorders"] = recorders
    return results
