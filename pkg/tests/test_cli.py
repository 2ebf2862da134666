import json

import pytest

from pgasim.cli import main


def test_bench_bw_writes_csv(tmp_path, capsys):
    out = tmp_path / "bw.csv"
    assert main(["bench", "bw", "--packet-size", "512", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "op,packet_size,transfer_size,bandwidth_mbs,latency_us"
    assert len(lines) == 1 + 2 * 20


def test_bench_lat(tmp_path, capsys):
    out = tmp_path / "lat.csv"
    assert main(["bench", "lat", "--op", "put", "--out", str(out)]) == 0
    assert "put,512,0," in out.read_text()


def test_unknown_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_bad_size_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["app", "matmul", "--size", "100"])
    assert exc.value.code == 2


def test_matmul_report(capsys):
    assert main(["app", "matmul", "--size", "1024"]) == 0
    text = capsys.readouterr().out
    assert "1-node" in text and "2-node" in text and "GOPS" in text and "speedup" in text


def test_runtime_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"link": {"bytes_per_cycle": 0}}))
    assert main(["bench", "lat", "--config", str(cfg)]) == 1
    assert "error" in capsys.readouterr().err


def test_config_file_is_honoured(tmp_path, capsys):
    cfg = tmp_path / "slow.json"
    cfg.write_text(json.dumps({"link": {"hop_latency_cycles": 1000}}))
    out = tmp_path / "lat.csv"
    assert main(["bench", "lat", "--op", "put", "--config", str(cfg), "--out", str(out)]) == 0
    first = out.read_text().splitlines()[1].split(",")
    assert float(first[4]) > 4.0


def test_identical_runs_give_identical_csv(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["bench", "bw", "--packet-size", "256", "--out", str(a)])
    main(["bench", "bw", "--packet-size", "256", "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()
