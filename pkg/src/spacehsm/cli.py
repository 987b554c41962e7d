"""Command-line entry point.

    spacehsm run SCENARIO.yaml [--seed N] [--events-out PATH] [--metrics-out PATH]
                               [--log-export PATH]
    spacehsm verify LOG_EXPORT CERT
    spacehsm capacity SCENARIO.yaml

Exit status: 0 on success, 1 for a configuration error, 2 when a run reports
an invariant violation or ``verify`` rejects the certificate.
"""

from __future__ import annotations

import argparse
import base64
import binascii
import sys
from pathlib import Path

from .config import load_config
from .errors import ConfigError, MalformedMessage, RejectError
from .ground import export_logs, inclusion_proof_for, load_log_export, verify_certificate
from .messages import SignedCertificate
from .sim import AEAD_OVERHEAD, Engine, analytic_capacity, serialize_events

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INVALID = 2


def _write(path: str | None, text: str) -> None:
    if path is None:
        return
    if path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = config.model_copy(update={"seed": args.seed})
    engine = Engine(config)
    events, metrics = engine.run()
    _write(args.events_out, serialize_events(events))
    if args.metrics_out is None:
        print(metrics.to_json())
    else:
        _write(args.metrics_out, metrics.to_json() + "\n")
    _write(args.log_export, export_logs(engine.logs))
    for v in metrics.invariant_violations:
        print(f"invariant violation: {v}", file=sys.stderr)
    return EXIT_INVALID if metrics.invariant_violations else EXIT_OK


def _cmd_capacity(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    sizes = [s for _, s, _ in config.requests()] or [2560]
    print(analytic_capacity(config.link, min(sizes) + AEAD_OVERHEAD))
    return EXIT_OK


def _cmd_verify(args: argparse.Namespace) -> int:
    try:
        key, logs = load_log_export(Path(args.log_export).read_text(encoding="utf-8"))
        raw = base64.b64decode("".join(Path(args.cert).read_text(encoding="ascii").split()),
                               validate=True)
        cert = SignedCertificate.from_bytes(raw)
    except (MalformedMessage, RejectError, ValueError, KeyError, binascii.Error) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    proof = inclusion_proof_for(cert, logs)
    if proof is None:
        print(f"invalid: epoch {cert.signer_epoch} leaf {cert.leaf_index} is not in the log")
        return EXIT_INVALID
    if not verify_certificate(cert, key, logs, proof):
        print("invalid: signature or inclusion proof does not verify")
        return EXIT_INVALID
    state = "frozen" if logs[cert.signer_epoch].frozen else "active"
    print(f"valid: epoch {cert.signer_epoch} ({state}) leaf {cert.leaf_index} "
          f"of {logs[cert.signer_epoch].size}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spacehsm",
                                     description="Satellite HSM certificate-authority simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and print its metrics")
    run.add_argument("config")
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--events-out", metavar="PATH", help="write NDJSON events ('-' for stdout)")
    run.add_argument("--metrics-out", metavar="PATH", help="write metrics JSON instead of printing")
    run.add_argument("--log-export", metavar="PATH", help="write the certificate logs as NDJSON")
    run.set_defaults(func=_cmd_run)

    verify = sub.add_parser("verify", help="check a certificate against an exported log")
    verify.add_argument("log_export")
    verify.add_argument("cert", help="file holding a base64 SignedCertificate")
    verify.set_defaults(func=_cmd_verify)

    cap = sub.add_parser("capacity", help="print requests per pass for a scenario's link")
    cap.add_argument("config")
    cap.set_defaults(func=_cmd_capacity)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error at {exc.path or '<root>'}: {exc.message}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
