"""Command-line interface: ``tpl <command> ...``.

Exit codes: 0 ok, 2 verification reject or inconsistent aggregate,
3 input error, 4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Sequence

from . import experiments
from .anchor import SimChain, run_scenario
from .errors import InputError, InvariantViolation, LedgerError
from .ledger import (
    Ledger,
    LivenessConfig,
    PublicParams,
    coins_for_balances,
    ledger_lock,
    ledger_stats,
    reserve_balances,
)
from .policy import Policy, View, gen_view, render_table, verify_view
from .por import CoinRecord, CoinRegistry
from .state import Domain, DomainKind, DomainRegistry, TreasuryEvent, format_btc, parse_amount

EXIT_OK, EXIT_REJECT, EXIT_INPUT, EXIT_INVARIANT = 0, 2, 3, 4


def default_ledger_path() -> Path:
    home = os.environ.get("TPL_HOME")
    return Path(home) / "ledger" if home else Path("tpl-ledger")


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def parse_event_line(line: str) -> TreasuryEvent:
    """``t src dst value evid [key=value ...]``; evid is hex or ``-``."""
    parts = line.split()
    if len(parts) < 5:
        raise InputError("expected: t src dst value evid [key=value ...]")
    t_s, src, dst, value, evid_s, *kvs = parts
    try:
        t = int(t_s)
        evid = b"" if evid_s == "-" else bytes.fromhex(evid_s)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    meta = {}
    for kv in kvs:
        if "=" not in kv:
            raise InputError(f"metadata {kv!r} is not key=value")
        k, v = kv.split("=", 1)
        meta[k] = v
    return TreasuryEvent(t, src, dst, parse_amount(value), evid, meta)


def format_event_line(e: TreasuryEvent) -> str:
    evid = e.evid.hex() if e.evid else "-"
    meta = " ".join(f"{k}={v}" for k, v in sorted(e.meta.items()))
    return f"{e.t} {e.src} {e.dst} {e.v}sat {evid} {meta}".rstrip()


def read_lines(path: str | Path) -> list[tuple[int, str]]:
    out = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            out.append((lineno, line))
    return out


def parse_domain_spec(spec: str) -> Domain:
    """``id:KIND`` or ``id:KIND:1`` (encumbered flag)."""
    parts = spec.split(":")
    if len(parts) not in (2, 3):
        raise InputError(f"domain spec {spec!r} must be id:KIND[:encumbered]")
    try:
        kind = DomainKind(parts[1].upper())
    except ValueError:
        raise InputError(f"unknown domain kind {parts[1]!r}") from None
    enc = bool(int(parts[2])) if len(parts) == 3 else None
    return Domain(parts[0], kind, enc)


def read_coins(path: Path, treasury_pk: bytes) -> list[CoinRecord]:
    """``coin_id value owner domain``; owner is hex or ``treasury``."""
    coins = []
    for lineno, line in read_lines(path):
        parts = line.split()
        if len(parts) != 4:
            raise InputError(f"{path}:{lineno}: expected coin_id value owner domain")
        owner = treasury_pk if parts[2] == "treasury" else bytes.fromhex(parts[2])
        coins.append(CoinRecord(parts[0], parse_amount(parts[1]), owner, parts[3]))
    return coins


def params_to_text(pp: PublicParams) -> str:
    lines = [f"treasury_pk = {pp.treasury_pk.hex()}", f"provider_pk = {pp.provider_pk.hex()}", f"k = {pp.k}"]
    lines += [f"domain = {d}" for d in pp.registry.to_lines()]
    return "\n".join(lines) + "\n"


def params_from_text(text: str) -> PublicParams:
    kv: dict[str, str] = {}
    domains = []
    for line in text.splitlines():
        if "=" not in line:
            continue
        k, v = (s.strip() for s in line.split("=", 1))
        if k == "domain":
            domains.append(v)
        else:
            kv[k] = v
    try:
        return PublicParams(
            DomainRegistry.from_lines(domains),
            bytes.fromhex(kv["treasury_pk"]),
            bytes.fromhex(kv["provider_pk"]),
            int(kv["k"]),
        )
    except (KeyError, ValueError) as exc:
        raise InputError(f"bad public parameters: {exc}") from None


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _chain_path(args) -> Path:
    return Path(args.chain_path) if args.chain_path else Path(args.ledger_path) / Ledger.CHAIN


def _load_chain(args, k: int) -> SimChain:
    p = _chain_path(args)
    return SimChain.load(p) if p.exists() else SimChain(k=k)


def _emit(key: str, value) -> None:
    print(f"{key}={value}")


def _report(led: Ledger) -> None:
    for d, v in sorted(reserve_balances(led.state, led.registry).items()):
        print(f"balance {d} {format_btc(v)} BTC")
    print(f"balance {led.registry.fee} {format_btc(led.state[led.registry.fee])} BTC")
    _emit("records", len(led))
    _emit("commitment", led.commitment.hex())
    for a in led.anchors:
        _emit("anchor", f"{a.anchored_index}:{a.txid.hex()}@{a.height}")
    for p in led.pending:
        _emit("pending_anchor", f"{p.anchored_index}:{p.txid.hex()}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_init(args) -> int:
    path = Path(args.ledger_path)
    if (path / Ledger.META).exists():
        raise InputError(f"ledger already exists at {path}")
    specs = list(args.domain or [])
    if args.domains:
        specs += [line for _, line in read_lines(args.domains)]
    registry = DomainRegistry(parse_domain_spec(s.replace(" ", ":")) for s in specs)
    seed = bytes.fromhex(args.seed) if args.seed else None
    liveness = LivenessConfig.parse(args.liveness) if args.liveness else None
    with ledger_lock(path):
        led = Ledger.setup(registry, seed, k=args.k_confirmations or 6, liveness=liveness)
        led.save(path)
        chain_file = _chain_path(args)
        if not chain_file.exists():
            SimChain(k=led.k).save(chain_file)
    _emit("ledger", path)
    _emit("treasury_pk", led.treasury_pk.hex())
    _emit("provider_pk", led.provider_pk.hex())
    _emit("commitment", led.commitment.hex())
    return EXIT_OK


def _open(args, read_only: bool = False) -> Ledger:
    led = Ledger.load(args.ledger_path, read_only=read_only)
    if args.k_confirmations and args.k_confirmations != led.k:
        raise InputError(f"ledger was created with k={led.k}")
    return led


def cmd_append(args) -> int:
    events = []
    for lineno, line in read_lines(args.events):
        try:
            events.append(parse_event_line(line))
        except LedgerError as exc:
            raise InputError(f"{args.events}:{lineno}: {exc}") from None
    with ledger_lock(args.ledger_path):
        led = _open(args)
        lines = [lineno for lineno, _ in read_lines(args.events)]
        for lineno, e in zip(lines, events):
            try:
                led.append_event(e)
            except InputError as exc:
                # nothing has been written yet: the file on disk is untouched
                raise InputError(f"{args.events}:{lineno}: {exc}") from None
        led.save(args.ledger_path)
    _emit("appended", len(events))
    _report(led)
    return EXIT_OK


def cmd_snapshot(args) -> int:
    with ledger_lock(args.ledger_path):
        led = _open(args)
        if args.coins:
            coins = read_coins(Path(args.coins), led.treasury_pk)
        else:
            bal = reserve_balances(led.state, led.registry)
            coins = coins_for_balances(bal, led.registry, led.treasury_pk, f"r{len(led) + 1}")
        snap = led.snapshot_trigger(coins, t=args.t)
        led.save(args.ledger_path)
    _emit("snapshot_t", snap.t)
    _emit("snapshot_root", snap.root.hex())
    for d, v in sorted(snap.totals.items()):
        print(f"snapshot_total {d} {format_btc(v)} BTC")
    _report(led)
    return EXIT_OK


def cmd_anchor(args) -> int:
    with ledger_lock(args.ledger_path):
        led = _open(args)
        chain = _load_chain(args, led.k)
        pend = led.anchor_trigger(chain)
        led.poll_anchors(chain)
        led.save(args.ledger_path)
        chain.save(_chain_path(args))
    _emit("anchor_tx", pend.txid.hex())
    _emit("anchored_index", pend.anchored_index)
    _report(led)
    return EXIT_OK


def cmd_mine(args) -> int:
    with ledger_lock(args.ledger_path):
        led = _open(args)
        chain = _load_chain(args, led.k)
        if args.scenario:
            run_scenario(chain, Path(args.scenario).read_text().splitlines())
        chain.mine(args.blocks)
        done = led.poll_anchors(chain)
        led.save(args.ledger_path)
        chain.save(_chain_path(args))
    _emit("tip", chain.tip)
    for a in done:
        _emit("confirmed", f"{a.anchored_index}:{a.txid.hex()}@{a.height}")
    _report(led)
    return EXIT_OK


def _policy_arg(led: Ledger, arg: str) -> Policy:
    p = Path(arg)
    if p.is_file():
        return Policy.load(p)
    if arg in led.policies:
        return led.policies[arg]
    raise InputError(f"{arg!r} is neither a policy file nor a catalogued policy id")


def cmd_view(args) -> int:
    with ledger_lock(args.ledger_path):
        led = _open(args)
        pol = _policy_arg(led, args.policy)
        if led.policies.get(pol.policy_id) != pol:
            led.register_policy(pol)
            led.save(args.ledger_path)
    view = gen_view(led, pol, args.as_of)
    out = Path(args.out)
    view.save(out)
    (out / "policy.txt").write_text(pol.to_text())
    (out / "params.txt").write_text(params_to_text(led.public_params))
    print(render_table(view))
    _emit("bundle", out)
    _emit("as_of", view.as_of)
    for r in view.table:
        _emit("row", "|".join(str(x) for x in r))
    return EXIT_OK


def _verify_bundle(bundle: Path, args) -> tuple[View, object]:
    view = View.load(bundle)
    pol = Policy.load(args.policy) if getattr(args, "policy", None) else Policy.load(bundle / "policy.txt")
    ledger_meta = Path(args.ledger_path) / Ledger.META
    if getattr(args, "params", None):
        pp = params_from_text(Path(args.params).read_text())
    elif ledger_meta.exists():
        pp = Ledger.load(args.ledger_path, read_only=True, verify=False).public_params
    else:
        pp = params_from_text((bundle / "params.txt").read_text())
    chain = _load_chain(args, pp.k)
    coins = None
    if getattr(args, "registry", None):
        coins = CoinRegistry.from_coins(read_coins(Path(args.registry), pp.treasury_pk))
    return view, verify_view(view, pol, chain, pp, coins)


def cmd_verify_view(args) -> int:
    view, verdict = _verify_bundle(Path(args.bundle), args)
    _emit("verdict", "accept" if verdict else "reject")
    if not verdict:
        _emit("reason", verdict.reason.value)
        print(str(verdict))
        return EXIT_REJECT
    _emit("as_of", view.as_of)
    return EXIT_OK


def cmd_stats(args) -> int:
    led = _open(args, read_only=True)
    st = ledger_stats(led)
    on_disk = (Path(args.ledger_path) / Ledger.RECORDS).stat().st_size
    _emit("records", st.records)
    _emit("events", st.events)
    _emit("snapshots", st.snapshots)
    _emit("anchors", st.anchors)
    _emit("ledger_bytes", on_disk)
    _emit("bytes_per_event", f"{st.bytes_per_event:.1f}")
    _emit("anchor_payload_bytes", st.anchor_payload_bytes)
    _emit("projected_anchors", st.projected_anchors(args.years))
    _emit("projected_payload_bytes", st.projected_payload_bytes(args.years))
    return EXIT_OK


def cmd_experiment(args) -> int:
    outcomes = experiments.run_manifest(args.manifest)
    for o in outcomes:
        print(experiments.format_outcome(o, per_trial=args.per_trial))
    _emit("total_wins", sum(o.wins for o in outcomes))
    return EXIT_OK


def cmd_aggregate(args) -> int:
    claims = [parse_amount(c) for c in (args.claim or [])]
    for b in args.bundles:
        view, verdict = _verify_bundle(Path(b), args)
        if not verdict:
            _emit("rejected", f"{b} {verdict.reason.value}")
            return EXIT_REJECT
        claims.append(experiments.claim_from_view(view))
    res = experiments.aggregate_supply_check(claims, parse_amount(args.circulating), parse_amount(args.eps))
    _emit("total", f"{format_btc(res.total)} BTC")
    _emit("bound", f"{format_btc(res.bound)} BTC")
    _emit("consistent", "yes" if res else "no")
    if not res:
        print(res.detail)
        return EXIT_REJECT
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        led = _open(args, read_only=True)
    except InvariantViolation as exc:
        # stored files disagree with their recomputation
        _emit("verify", f"fail load {exc}")
        return EXIT_REJECT
    failure = led.verify()
    if failure is not None:
        _emit("verify", f"fail {failure.check.value}@{failure.index} {failure.detail}")
        return EXIT_REJECT
    _emit("verify", "ok")
    if args.to is not None:
        _emit("commitment_at", f"{args.to}:{led.commitment_at(args.to).hex()}")
    if args.events_out:
        Path(args.events_out).write_text("".join(format_event_line(e) + "\n" for e in led.events()))
    _report(led)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tpl", description="Treasury proof ledger tool")
    p.add_argument("--ledger-path", default=str(default_ledger_path()))
    p.add_argument("--chain-path", default=None, help="simulated substrate state (default: <ledger>/chain.json)")
    p.add_argument("--k-confirmations", type=int, default=None)
    p.add_argument("--liveness", default=None, help="d_event,d_snap,d_anchor in logical ticks")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("init", help="create an empty ledger")
    s.add_argument("--domain", action="append", help="id:KIND[:encumbered], repeatable")
    s.add_argument("--domains", help="file with one 'id KIND [encumbered]' per line")
    s.add_argument("--seed", help="32-octet hex seed for deterministic keys")
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("append", help="append events from a file")
    s.add_argument("events")
    s.set_defaults(func=cmd_append)

    s = sub.add_parser("snapshot", help="append a proof-of-reserves snapshot")
    s.add_argument("--coins", help="coin file (default: coins matching current balances)")
    s.add_argument("--t", type=int, default=None)
    s.set_defaults(func=cmd_snapshot)

    s = sub.add_parser("anchor", help="submit the current commitment to the substrate")
    s.set_defaults(func=cmd_anchor)

    s = sub.add_parser("mine", help="mine blocks and finalise anchors")
    s.add_argument("blocks", type=int, nargs="?", default=1)
    s.add_argument("--scenario", help="scenario script applied before mining")
    s.set_defaults(func=cmd_mine)

    s = sub.add_parser("view", help="generate a view bundle")
    s.add_argument("policy", help="policy file or catalogued policy id")
    s.add_argument("--out", required=True)
    s.add_argument("--as-of", type=int, default=None)
    s.set_defaults(func=cmd_view)

    s = sub.add_parser("verify-view", help="verify a view bundle")
    s.add_argument("bundle")
    s.add_argument("--policy", help="policy file to verify against (default: bundled)")
    s.add_argument("--params", help="public parameters file (default: ledger, else bundled)")
    s.add_argument("--registry", help="coin registry file for existence/ownership checks")
    s.set_defaults(func=cmd_verify_view)

    s = sub.add_parser("stats", help="cost-model statistics")
    s.add_argument("--years", type=int, default=1)
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("experiment", help="run an experiment manifest")
    s.add_argument("manifest")
    s.add_argument("--per-trial", action="store_true")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("aggregate", help="cross-institution supply consistency")
    s.add_argument("bundles", nargs="*")
    s.add_argument("--claim", action="append", help="raw exposure claim (BTC or Nsat)")
    s.add_argument("--circulating", required=True)
    s.add_argument("--eps", default="0")
    s.set_defaults(func=cmd_aggregate)

    s = sub.add_parser("replay", help="reload, re-verify and report")
    s.add_argument("--to", type=int, default=None)
    s.add_argument("--events-out", default=None)
    s.set_defaults(func=cmd_replay)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (LedgerError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
