from pathlib import Path

import pytest

from tagdiff.cli import SUBCOMMANDS, build_parser, main

SMALL = """\
[gas]
N = 20
eps = 0.02
[md]
t_end = 0.5
[trees]
n_specs = 40
[badset]
n_mc = 20000
"""


def _config(tmp_path: Path, extra: str = "") -> Path:
    p = tmp_path / "run.ini"
    p.write_text(SMALL + extra)
    return p


def test_every_subcommand_is_registered():
    parser = build_parser()
    for name in SUBCOMMANDS:
        assert parser.parse_args([name]).command == name


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2


def test_bad_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[pruning]\nA = 1\n")
    assert main(["badset", "--config", str(bad)]) == 2
    assert "pruning.A" in capsys.readouterr().err


def test_md_run_then_prune_stats(tmp_path):
    cfg = _config(tmp_path)
    out = tmp_path / "md"
    assert main(["md-run", "--config", str(cfg), "--out", str(out), "--seed", "5"]) == 0
    for name in ("collision_log.csv", "tagged_path.csv", "final_state.csv", "config.ini",
                 "report.csv", "summary.txt"):
        assert (out / name).exists()
    cfg2 = _config(tmp_path, f"[pruning]\nlog = {out / 'collision_log.csv'}\n")
    out2 = tmp_path / "prune"
    assert main(["prune-stats", "--config", str(cfg2), "--out", str(out2)]) == 0
    lines = (out2 / "prune_counts.csv").read_text().splitlines()
    assert lines[0].startswith("# schema: tagdiff.prune_counts/v1")
    assert len(lines) == 2 + 5


def test_outputs_are_byte_identical(tmp_path):
    cfg = _config(tmp_path)
    for d in ("a", "b"):
        main(["md-run", "--config", str(cfg), "--out", str(tmp_path / d), "--seed", "3"])
    for name in ("collision_log.csv", "tagged_path.csv", "final_state.csv", "report.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_couple_trees_and_badset_smoke(tmp_path):
    cfg = _config(tmp_path)
    assert main(["couple-trees", "--config", str(cfg), "--out", str(tmp_path / "c")]) in (0, 1)
    assert (tmp_path / "c" / "coupling.csv").read_text().count("\n") == 40 + 2
    assert main(["badset", "--config", str(cfg), "--out", str(tmp_path / "b")]) in (0, 1)
    assert (tmp_path / "b" / "badset.csv").exists()
