"""State machines for the networked protocol roles.

Alice and Bob run the session lock-step over one framed link: a CONFIG
handshake, then per round QUDIT (alice), OUTCOME_ANNOUNCE (bob),
PAIR_ANNOUNCE (alice); then sifting, sample reveal, the continuation
gate, k pairing-parity exchanges, block parities, and a VERDICT
cross-check.  Eve is an optional middlebox that relays every classical
frame untouched and pushes each QUDIT frame through her channel model.

Both endpoints consume randomness through the same five-stream layout
as :func:`quditqkd.protocol.run_session` and reuse its helpers, so a
session with a shared master seed reproduces the in-process engine's
keys exactly (the shared seed is this artifact's reproducibility
contract, not a security model).  All estimate and keep decisions are
computed independently by both sides from announced data; any
divergence surfaces as a VERDICT mismatch and a protocol-error abort.
"""

from __future__ import annotations

import socket
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from ..channels import apply_term, resolve_channel
from ..distill import DistillParams, block_parities, draw_stage_seeds, pair_stage_permutation
from ..field import FieldSpec
from ..protocol import (
    STREAM_ALICE,
    STREAM_BOB,
    STREAM_CHANNEL,
    STREAM_PAIRING,
    STREAM_SAMPLE,
    RateEstimate,
    RoundLog,
    SessionConfig,
    condition_verdict,
    decode_bob_bit,
    draw_alice_round,
    draw_bob_round,
    estimate_ec,
    pair_table,
    spawn_streams,
)
from ..qstates import Outcome, SparseKet
from .wire import (
    ABORT_CONDITION,
    ABORT_CONFIG,
    ABORT_PROTOCOL,
    AbortReceived,
    FrameType,
    Link,
    PeerDisconnect,
    ProtocolViolation,
    decode_block_parity,
    decode_json,
    decode_outcome_announce,
    decode_pair,
    decode_parity_round,
    decode_sample_reveal,
    encode_block_parity,
    encode_index_list,
    decode_index_list,
    encode_json,
    encode_outcome_announce,
    encode_pair,
    encode_parity_round,
    encode_sample_reveal,
)

ROLES = ("alice", "bob", "eve")
ABORT_INSUFFICIENT_SIFT = "insufficient-sift"
ABORT_INSUFFICIENT_KEY = "insufficient-key"


@dataclass(frozen=True)
class RoleConfig:
    """One role's launch parameters.

    ``session.channel`` is meaningful only for eve (the model she
    applies); alice and bob ignore it.  The handshake pins everything
    alice and bob must agree on, including the shared master seed.
    """

    role: str
    session: SessionConfig
    params: DistillParams
    listen: str | None = None
    connect_alice: str | None = None
    connect_bob: str | None = None

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}")


@dataclass
class RoleReport:
    """Exit report of one role run."""

    role: str
    status: str = "pass"
    exit_code: int = 0
    shared: dict | None = None
    final_key: list[int] | None = None
    abort_sent: str | None = None
    transcripts: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "role": self.role,
            "status": self.status,
            "exit_code": self.exit_code,
            "shared": self.shared,
            "final_key": self.final_key,
            "abort_sent": self.abort_sent,
            "transcripts": self.transcripts,
            "extra": self.extra,
        }


def handshake_facts(cfg: RoleConfig) -> dict:
    """The parameters alice and bob must hold identically."""
    spec = FieldSpec.get(cfg.session.n, cfg.session.modulus)
    return {
        "n": cfg.session.n,
        "modulus": spec.modulus,
        "rounds": cfg.session.rounds,
        "sample_fraction": cfg.session.sample_fraction,
        "seed": cfg.session.seed,
        "ec_mode": cfg.session.ec_mode,
        "condition_strict": cfg.session.condition_strict,
        "k": cfg.params.k,
        "r": cfg.params.r,
    }


def _announced_log(spec: FieldSpec, ai, aj, bi, bj, clicked) -> RoundLog:
    """RoundLog view of announced data, enough for the e_c estimator.

    The outcome column is the announced category (in-pair rounds appear
    as Plus); sign outcomes and key bits are never on the wire, so the
    bit columns are placeholders the estimator does not read.
    """
    delta = ai ^ aj
    on = (bi ^ bj) == delta
    off = np.full(len(ai), -1, np.int16)
    mul_t = spec.mul_table.astype(np.int16)
    inv_t = spec.inv_table.astype(np.int16)
    off[on] = mul_t[(bi ^ ai)[on], inv_t[delta[on]]]
    outcome = np.where(clicked, 0, 2).astype(np.int8)
    zeros = np.zeros(len(ai), np.int8)
    return RoundLog(ai, aj, zeros, bi, bj, outcome, zeros, off)


def _session_tail(
    report: RoleReport,
    link: Link,
    cfg: RoleConfig,
    spec: FieldSpec,
    streams,
    ai: np.ndarray,
    aj: np.ndarray,
    bi: np.ndarray,
    bj: np.ndarray,
    clicked: np.ndarray,
    my_bits_full: np.ndarray,
    leader: bool,
) -> None:
    """Everything after the per-round exchange; identical for both ends.

    ``leader`` marks the side that sends first in each exchange (alice)
    and owns the sample and pairing streams; the follower validates the
    leader's announcements against its own computation.
    """
    session = cfg.session
    params = cfg.params

    sifted = (ai == bi) & (aj == bj)
    sift_idx = np.flatnonzero(sifted)
    n_sift = len(sift_idx)
    if leader:
        link.send(FrameType.SIFT_ACCEPT, encode_index_list(sift_idx))
    else:
        announced = decode_index_list(link.expect(FrameType.SIFT_ACCEPT))
        if not np.array_equal(announced, sift_idx):
            raise ProtocolViolation("sift list does not match own computation")
    if n_sift == 0:
        link.send_abort(ABORT_INSUFFICIENT_SIFT)
        report.abort_sent = ABORT_INSUFFICIENT_SIFT
        report.status = "insufficient-sift"
        report.exit_code = 1
        return

    n_samp = int(session.sample_fraction * n_sift)
    if leader:
        perm = streams[STREAM_SAMPLE].permutation(n_sift)
        sample_pos = np.sort(perm[:n_samp])
        sample_rounds = sift_idx[sample_pos]
        link.send(
            FrameType.SAMPLE_REVEAL,
            encode_sample_reveal(sample_rounds, my_bits_full[sample_rounds]),
        )
        their_rounds, their_bits = decode_sample_reveal(link.expect(FrameType.SAMPLE_REVEAL))
        if not np.array_equal(their_rounds, sample_rounds):
            raise ProtocolViolation("sample reveal does not echo the sampled rounds")
        alice_sample = my_bits_full[sample_rounds]
        bob_sample = their_bits
    else:
        their_rounds, their_bits = decode_sample_reveal(link.expect(FrameType.SAMPLE_REVEAL))
        if len(their_rounds) != n_samp:
            raise ProtocolViolation(
                f"sample size {len(their_rounds)} != expected {n_samp}"
            )
        if not np.isin(their_rounds, sift_idx).all():
            raise ProtocolViolation("sample reveals an unsifted round")
        sample_rounds = their_rounds
        link.send(
            FrameType.SAMPLE_REVEAL,
            encode_sample_reveal(sample_rounds, my_bits_full[sample_rounds]),
        )
        alice_sample = their_bits
        bob_sample = my_bits_full[sample_rounds]

    samp_click = clicked[sample_rounds]
    samp_err = alice_sample != bob_sample
    e_b = RateEstimate.from_counts(
        int(np.count_nonzero(samp_err & samp_click)),
        int(np.count_nonzero(samp_click)),
    )
    e_b_all = RateEstimate.from_counts(int(np.count_nonzero(samp_err)), n_samp)
    e_c = estimate_ec(_announced_log(spec, ai, aj, bi, bj, clicked), session.ec_mode)
    lhs, verdict = condition_verdict(e_b, e_c, session.n, session.condition_strict)

    shared: dict = {
        "n": session.n,
        "rounds": session.rounds,
        "sifted": n_sift,
        "sampled": n_samp,
        "e_b": [e_b.successes, e_b.trials],
        "e_b_all": [e_b_all.successes, e_b_all.trials],
        "e_c": [e_c.successes, e_c.trials],
        "lhs": lhs,
        "condition_pass": verdict,
    }
    report.shared = shared
    if not verdict:
        link.send_abort(ABORT_CONDITION)
        report.abort_sent = ABORT_CONDITION
        report.status = ABORT_CONDITION
        report.exit_code = 2
        return

    keep_rounds = sift_idx[~np.isin(sift_idx, sample_rounds)]
    bits = my_bits_full[keep_rounds].astype(np.uint8)
    if len(bits) < params.min_length:
        link.send_abort(ABORT_INSUFFICIENT_KEY)
        report.abort_sent = ABORT_INSUFFICIENT_KEY
        report.status = "insufficient-key"
        report.exit_code = 1
        return

    seeds = draw_stage_seeds(params.k, streams[STREAM_PAIRING]) if leader else None
    kept_per_stage: list[int] = []
    for t in range(params.k):
        cur = len(bits)
        half = cur // 2
        if leader:
            seed = int(seeds[t])
            perm = pair_stage_permutation(cur, seed)
            first = perm[0 : 2 * half : 2]
            second = perm[1 : 2 * half : 2]
            mine = bits[first] ^ bits[second]
            link.send(FrameType.PARITY_ROUND, encode_parity_round(seed, mine))
            echo_seed, theirs = decode_parity_round(
                link.expect(FrameType.PARITY_ROUND), half
            )
            if echo_seed != seed:
                raise ProtocolViolation("parity round echoed a different seed")
        else:
            seed, theirs = decode_parity_round(link.expect(FrameType.PARITY_ROUND), half)
            perm = pair_stage_permutation(cur, seed)
            first = perm[0 : 2 * half : 2]
            second = perm[1 : 2 * half : 2]
            mine = bits[first] ^ bits[second]
            link.send(FrameType.PARITY_ROUND, encode_parity_round(seed, mine))
        keep = mine == theirs
        bits = bits[first[keep]]
        kept_per_stage.append(int(np.count_nonzero(keep)))

    n_blocks = len(bits) // params.r
    mine_blocks = block_parities(bits, params.r)
    if leader:
        link.send(FrameType.BLOCK_PARITY, encode_block_parity(params.r, mine_blocks))
        r_echo, their_blocks = decode_block_parity(
            link.expect(FrameType.BLOCK_PARITY), n_blocks
        )
    else:
        r_echo, their_blocks = decode_block_parity(
            link.expect(FrameType.BLOCK_PARITY), n_blocks
        )
        link.send(FrameType.BLOCK_PARITY, encode_block_parity(params.r, mine_blocks))
    if r_echo != params.r:
        raise ProtocolViolation(f"block size {r_echo} != agreed {params.r}")
    disagreements = int((mine_blocks ^ their_blocks).astype(np.int64).sum())

    shared.update(
        {
            "kept_per_stage": kept_per_stage,
            "survivors": int(len(bits)),
            "blocks": n_blocks,
            "block_r": params.r,
            "disagreements": disagreements,
        }
    )
    if leader:
        link.send(FrameType.VERDICT, encode_json(shared))
        theirs_verdict = decode_json(link.expect(FrameType.VERDICT))
    else:
        theirs_verdict = decode_json(link.expect(FrameType.VERDICT))
        link.send(FrameType.VERDICT, encode_json(shared))
    if theirs_verdict != shared:
        raise ProtocolViolation("verdict facts differ between endpoints")

    report.final_key = [int(b) for b in mine_blocks]
    report.status = "pass"
    report.exit_code = 0


def _run_endpoint(cfg: RoleConfig, sock: socket.socket, leader: bool) -> RoleReport:
    role = "alice" if leader else "bob"
    link = Link(sock)
    report = RoleReport(role=role)
    session = cfg.session
    spec = FieldSpec.get(session.n, session.modulus)
    table = pair_table(spec)
    streams = spawn_streams(session.seed)
    rounds = session.rounds
    try:
        mine = handshake_facts(cfg)
        if leader:
            link.send(FrameType.CONFIG, encode_json(mine))
            theirs = decode_json(link.expect(FrameType.CONFIG))
            if theirs != mine:
                link.send_abort(ABORT_CONFIG)
                report.abort_sent = ABORT_CONFIG
                report.status = "config-mismatch"
                report.exit_code = 1
                return report
        else:
            theirs = decode_json(link.expect(FrameType.CONFIG))
            if theirs != mine:
                link.send_abort(ABORT_CONFIG)
                report.abort_sent = ABORT_CONFIG
                report.status = "config-mismatch"
                report.exit_code = 1
                return report
            link.send(FrameType.CONFIG, encode_json(mine))

        ai = np.empty(rounds, np.int16)
        aj = np.empty(rounds, np.int16)
        bi = np.empty(rounds, np.int16)
        bj = np.empty(rounds, np.int16)
        clicked = np.empty(rounds, bool)
        my_bits = np.empty(rounds, np.uint8)
        if leader:
            for rnd in range(rounds):
                prep = draw_alice_round(spec, table, streams[STREAM_ALICE])
                link.send(FrameType.QUDIT, prep.ket().serialize())
                u, v, category = decode_outcome_announce(
                    link.expect(FrameType.OUTCOME_ANNOUNCE), spec.order
                )
                link.send(FrameType.PAIR_ANNOUNCE, encode_pair(prep.i, prep.j))
                ai[rnd], aj[rnd] = prep.i, prep.j
                bi[rnd], bj[rnd] = u, v
                clicked[rnd] = category == 0
                my_bits[rnd] = prep.s
        else:
            for rnd in range(rounds):
                payload = link.expect(FrameType.QUDIT)
                try:
                    ket = SparseKet.deserialize(spec, payload)
                except ValueError as exc:
                    raise ProtocolViolation(f"bad qudit payload: {exc}") from exc
                (u, v), out, noise = draw_bob_round(spec, table, ket, streams[STREAM_BOB])
                category = 0 if out != Outcome.OUTSIDE else 1
                link.send(
                    FrameType.OUTCOME_ANNOUNCE, encode_outcome_announce(u, v, category)
                )
                i, j = decode_pair(link.expect(FrameType.PAIR_ANNOUNCE), spec.order)
                ai[rnd], aj[rnd] = i, j
                bi[rnd], bj[rnd] = u, v
                clicked[rnd] = category == 0
                my_bits[rnd] = decode_bob_bit(out, noise)

        _session_tail(
            report, link, cfg, spec, streams, ai, aj, bi, bj, clicked, my_bits, leader
        )
    except AbortReceived as exc:
        report.status = f"peer-abort:{exc.reason}"
        report.exit_code = 2 if exc.reason == ABORT_CONDITION else 1
    except ProtocolViolation as exc:
        link.send_abort(ABORT_PROTOCOL)
        report.abort_sent = ABORT_PROTOCOL
        report.status = "protocol-error"
        report.exit_code = 1
        report.extra["detail"] = str(exc)
    except (PeerDisconnect, ConnectionError, OSError) as exc:
        report.status = "peer-disconnect"
        report.exit_code = 1
        report.extra["detail"] = str(exc)
    finally:
        report.transcripts["peer"] = link.transcript_dict()
        link.close()
    return report


def run_alice(cfg: RoleConfig, sock: socket.socket) -> RoleReport:
    return _run_endpoint(cfg, sock, leader=True)


def run_bob(cfg: RoleConfig, sock: socket.socket) -> RoleReport:
    return _run_endpoint(cfg, sock, leader=False)


def run_eve(cfg: RoleConfig, sock_alice: socket.socket, sock_bob: socket.socket) -> RoleReport:
    """Relay both directions; push QUDIT frames through the channel model.

    Classical frames pass through byte-identical.  The channel stream is
    consumed exactly as the in-process engine does (two uniforms per
    qudit, term index then auxiliary), so a shared master seed keeps the
    relayed session equal to :func:`quditqkd.protocol.run_session`.
    """
    session = cfg.session
    spec = FieldSpec.get(session.n, session.modulus)
    model = resolve_channel(session.channel, spec)
    rng = spawn_streams(session.seed)[STREAM_CHANNEL]
    la = Link(sock_alice)
    lb = Link(sock_bob)
    report = RoleReport(role="eve")
    audit: list[list[int]] = []
    errors: list[str] = []
    io_notes: list[str] = []

    def alice_to_bob() -> None:
        rnd = 0
        try:
            while True:
                ftype, payload = la.recv()
                if ftype == FrameType.QUDIT:
                    try:
                        ket = SparseKet.deserialize(spec, payload)
                    except ValueError as exc:
                        raise ProtocolViolation(f"bad qudit payload: {exc}") from exc
                    term_u = rng.random()
                    aux_u = rng.random()
                    term = model.sample_term_index(term_u)
                    ket = apply_term(model.terms[term][1], ket, aux_u, spec)
                    payload = ket.serialize()
                    audit.append([rnd, term])
                    rnd += 1
                lb.send(ftype, payload)
        except PeerDisconnect:
            pass
        except ProtocolViolation as exc:
            errors.append(str(exc))
            la.send_abort(ABORT_PROTOCOL)
            lb.send_abort(ABORT_PROTOCOL)
        except OSError as exc:
            # receiver gone while a frame was in flight: the pipe is
            # simply finished (mutual aborts close both ends at once)
            io_notes.append(str(exc))
        finally:
            lb.close_write()

    def bob_to_alice() -> None:
        try:
            while True:
                ftype, payload = lb.recv()
                la.send(ftype, payload)
        except PeerDisconnect:
            pass
        except ProtocolViolation as exc:
            errors.append(str(exc))
            la.send_abort(ABORT_PROTOCOL)
            lb.send_abort(ABORT_PROTOCOL)
        except OSError as exc:
            io_notes.append(str(exc))
        finally:
            la.close_write()

    downstream = threading.Thread(target=alice_to_bob, name="eve-a2b")
    upstream = threading.Thread(target=bob_to_alice, name="eve-b2a")
    downstream.start()
    upstream.start()
    downstream.join()
    upstream.join()
    report.extra = {"audit_terms": audit, "errors": errors, "io_notes": io_notes}
    if errors:
        report.status = "protocol-error"
        report.exit_code = 1
    report.transcripts = {
        "alice": la.transcript_dict(),
        "bob": lb.transcript_dict(),
    }
    la.close()
    lb.close()
    return report


def _parse_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not port.isdigit():
        raise ValueError(f"endpoint must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def _no_delay(sock: socket.socket) -> socket.socket:
    # the round phase ping-pongs small frames; Nagle would add ~40ms each
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return sock


def _accept_one(addr: tuple[str, int], timeout: float = 60.0) -> socket.socket:
    server = socket.create_server(addr)
    try:
        server.settimeout(timeout)
        conn, _ = server.accept()
        return _no_delay(conn)
    finally:
        server.close()


def _connect(addr: tuple[str, int], attempts: int = 40, delay: float = 0.25) -> socket.socket:
    last: OSError | None = None
    for _ in range(attempts):
        try:
            sock = socket.create_connection(addr, timeout=30.0)
            sock.settimeout(None)
            return _no_delay(sock)
        except OSError as exc:
            last = exc
            time.sleep(delay)
    raise ConnectionError(f"could not connect to {addr}: {last}")


def run_role(cfg: RoleConfig) -> RoleReport:
    """Open sockets per the topology flags and run the state machine.

    Bob always listens.  Alice connects straight to Bob when no
    middlebox is used, or listens for Eve; Eve dials both listeners.
    """
    if cfg.role == "alice":
        if cfg.connect_bob:
            sock = _connect(_parse_addr(cfg.connect_bob))
        elif cfg.listen:
            sock = _accept_one(_parse_addr(cfg.listen))
        else:
            raise ValueError("alice needs either --connect-bob or --listen")
        return run_alice(cfg, sock)
    if cfg.role == "bob":
        if not cfg.listen:
            raise ValueError("bob needs --listen")
        return run_bob(cfg, _accept_one(_parse_addr(cfg.listen)))
    if not (cfg.connect_alice and cfg.connect_bob):
        raise ValueError("eve needs --connect-alice and --connect-bob")
    sock_a = _connect(_parse_addr(cfg.connect_alice))
    sock_b = _connect(_parse_addr(cfg.connect_bob))
    return run_eve(cfg, sock_a, sock_b)
