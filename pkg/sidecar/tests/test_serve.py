"""Argument surface and startup failure behavior."""

from __future__ import annotations

import pytest

import sieve_sidecar.cli as cli
import sieve_sidecar.models


def test_defaults():
    args = cli.build_parser().parse_args([])
    assert args.captioner == "blip14m"
    assert args.device == "cpu"
    assert args.port == 8080
    assert args.max_batch == 64
    assert not args.allow_url_fetch
    assert not args.non_deterministic


def test_unknown_captioner_rejected():
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args(["--captioner", "resnet"])


def test_model_load_failure_exits_nonzero(monkeypatch, capsys):
    def refuse(name, device="cpu"):
        raise RuntimeError("no such checkpoint")

    monkeypatch.setattr(sieve_sidecar.models, "load_captioner", refuse)
    assert cli.main([]) == 1
    assert "no such checkpoint" in capsys.readouterr().err


def test_bad_max_batch_exits_nonzero(capsys):
    assert cli.main(["--max-batch", "0"]) == 1
    assert "max_batch" in capsys.readouterr().err


def test_serves_with_loaded_models(monkeypatch, captioner, encoder):
    served = {}

    monkeypatch.setattr(sieve_sidecar.models, "load_captioner", lambda name, device: captioner)
    monkeypatch.setattr(sieve_sidecar.models, "load_encoder", lambda name, device: encoder)

    import uvicorn

    def fake_run(app, host, port):
        served["host"], served["port"] = host, port

    monkeypatch.setattr(uvicorn, "run", fake_run)
    assert cli.main(["--port", "9123", "--host", "0.0.0.0"]) == 0
    assert served == {"host": "0.0.0.0", "port": 9123}
