import json

import pytest

from mrenforce import cli, corpus_dir

C = corpus_dir()


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    return code, capsys.readouterr()


@pytest.fixture
def trace3(tmp_path):
    p = tmp_path / "three.trace"
    p.write_text("cH1=T\ncL1=F\ncL2=2\n")
    return p


@pytest.fixture
def h1(tmp_path):
    p = tmp_path / "h1.trace"
    p.write_text("cH1=T\n")
    return p


# run

def test_run_ri_fig9(capsys, tmp_path):
    out = tmp_path / "t.json"
    code, cap = run(capsys, "run", "--policy", "ri", "--program", C / "fig8.ifc", "--channels",
                    C / "fig8.chan.yaml", "--input", C / "fig9.trace", "--pretty", "-o", out)
    assert code == 0
    doc = json.loads(out.read_text())
    assert [(w["channel"], w["value"]) for w in doc["global_output"]] == [("cH3", "2"), ("cL3", "2")]
    table = cap.out.split("global output")[1]
    assert table.index("2 [0]") < table.index("2 [1]")


def test_run_ni_quiescent_is_success(capsys):
    code, cap = run(capsys, "run", "--policy", "ni", "--program", C / "fig8.ifc", "--input", C / "fig9.trace")
    assert code == 0 and json.loads(cap.out)["outcome"] == "QuiescentWithResidual"


def test_run_bare_program(capsys, trace3):
    code, cap = run(capsys, "run", "--policy", "none", "--program", C / "fig8.ifc", "--input", trace3)
    assert code == 0 and json.loads(cap.out)["outcome"] == "Terminated"


def test_run_deadlock_exit(capsys, h1):
    code, _ = run(capsys, "run", "--policy", "subdi", "--program", C / "fig14c.ifc", "--input", h1,
                  "--budget", 1000)
    assert code == 4


def test_run_budget_exit(capsys, tmp_path):
    prog = tmp_path / "loop.ifc"
    prog.write_text("while T do { skip }")
    assert run(capsys, "run", "--program", prog, "--budget", 50)[0] == 2
    assert run(capsys, "run", "--policy", "none", "--program", prog, "--budget", 50)[0] == 2


def test_budget_from_environment(capsys, tmp_path, monkeypatch):
    prog = tmp_path / "loop.ifc"
    prog.write_text("while T do { skip }")
    monkeypatch.setenv(cli.BUDGET_ENV, "40")
    code, cap = run(capsys, "run", "--program", prog)
    assert code == 2 and json.loads(cap.out)["steps"] == 40


@pytest.mark.parametrize("problem", ["missing", "syntax", "policy", "channel"])
def test_run_load_errors(capsys, tmp_path, problem):
    prog = tmp_path / "p.ifc"
    prog.write_text("output 1 to cL3")
    args = ["run", "--program", prog]
    if problem == "missing":
        args = ["run", "--program", tmp_path / "nope.ifc"]
    elif problem == "syntax":
        prog.write_text("input x from")
    elif problem == "policy":
        args += ["--policy", tmp_path / "nope.yaml"]
    else:
        prog.write_text("output 1 to cZ9")
    code, cap = run(capsys, *args)
    assert code == 3 and "error" in cap.err


def test_run_seeded_and_schedule_file(capsys, tmp_path):
    sched = tmp_path / "s.txt"
    code, cap = run(capsys, "run", "--policy", "di", "--program", C / "fig8.ifc", "--input", C / "fig9.trace",
                    "--seed", 3, "--emit-schedule", sched)
    assert code == 0
    assert sched.read_text().splitlines() == json.loads(cap.out)["schedule"]


def test_run_policy_file(capsys, tmp_path):
    from mrenforce import policies
    path = tmp_path / "mine.yaml"
    path.write_text(policies.dump_policy(policies.get_policy("ri")))
    out = tmp_path / "t.json"
    code, _ = run(capsys, "run", "--policy", path, "--program", C / "fig8.ifc", "--input", C / "fig9.trace",
                  "-o", out)
    assert code == 0
    assert run(capsys, "replay", out)[0] == 0


# check

def test_check_ri_violated_and_witness_replays(capsys, tmp_path):
    w = tmp_path / "w.json"
    code, _ = run(capsys, "check", "--property", "ri", "--program", C / "fig12a.ifc", "--max-len", 3,
                  "--witness", w)
    assert code == 1
    wit = json.loads(w.read_text())
    code, cap = run(capsys, "run", "--policy", "none", "--program", C / "fig12a.ifc", "--input", w)
    assert code == 0
    doc = json.loads(cap.out)
    assert doc["outcome"] == "Terminated"
    assert [(d["channel"], d["value"]) for d in doc["global_output"]] == \
        [(d["channel"], d["value"]) for d in wit["output"]]


def test_check_tini_holds(capsys):
    assert run(capsys, "check", "--property", "tini", "--program", C / "fig12a.ifc", "--max-len", 3)[0] == 0


def test_check_di_violated(capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code, cap = run(capsys, "check", "--property", "di", "--program", C / "fig12b.ifc", "--max-len", 3,
                    "--budget", 10000)
    assert code == 1
    assert (tmp_path / "fig12b.di.witness.json").exists()


def test_check_inconclusive(capsys):
    code, cap = run(capsys, "check", "--property", "ri", "--program", C / "fig12b.ifc", "--max-candidates", 0)
    assert code == 2 and "Inconclusive" in cap.out


def test_check_enforced_system(capsys):
    code, cap = run(capsys, "check", "--property", "tini", "--program", C / "fig8.ifc", "--enforced", "ni",
                    "--max-len", 2)
    assert code == 0


def test_check_alphabet_flag(capsys):
    code, cap = run(capsys, "check", "--property", "tini", "--program", C / "low_only.ifc", "--max-len", 1,
                    "--alphabet", "cL2=0,1,2")
    assert code == 0 and "inputs" in cap.out


# explore

def test_explore_singleton(capsys):
    code, _ = run(capsys, "explore", "--policy", "ri", "--program", C / "fig8.ifc", "--input", C / "fig9.trace")
    assert code == 0


def test_explore_deadlock(capsys, h1):
    code, cap = run(capsys, "explore", "--policy", "subdi", "--program", C / "fig14c.ifc", "--input", h1)
    assert code == 1 and "Deadlocked" in cap.out


def test_explore_skip(capsys, tmp_path, h1):
    prog = tmp_path / "skip.ifc"
    prog.write_text("skip")
    assert run(capsys, "explore", "--policy", "di", "--program", prog, "--input", h1)[0] == 0


def test_explore_frontier_cap(capsys):
    code, _ = run(capsys, "explore", "--policy", "di", "--program", C / "fig8.ifc", "--input", C / "fig9.trace",
                  "--max-states", 20)
    assert code == 2


# replay

def test_replay_round_trip(capsys, tmp_path):
    out = tmp_path / "t.json"
    run(capsys, "run", "--policy", "di", "--program", C / "fig8.ifc", "--input", C / "fig9.trace",
        "--seed", 11, "-o", out)
    code, cap = run(capsys, "replay", out)
    assert code == 0 and "reproduced" in cap.out


def test_replay_tampered(capsys, tmp_path):
    out = tmp_path / "t.json"
    run(capsys, "run", "--policy", "ri", "--program", C / "fig8.ifc", "--input", C / "fig9.trace", "-o", out)
    doc = json.loads(out.read_text())
    k = next(i for i, lb in enumerate(doc["schedule"]) if lb.startswith("local:1"))
    doc["schedule"][k] = "red::OUTR"
    out.write_text(json.dumps(doc))
    code, cap = run(capsys, "replay", out)
    assert code == 1 and f"step {k}" in cap.out


def test_replay_tampered_output(capsys, tmp_path):
    out = tmp_path / "t.json"
    run(capsys, "run", "--policy", "ri", "--program", C / "fig8.ifc", "--input", C / "fig9.trace", "-o", out)
    doc = json.loads(out.read_text())
    doc["global_output"][0]["value"] = "3"
    out.write_text(json.dumps(doc))
    code, cap = run(capsys, "replay", out)
    assert code == 1 and "global_output" in cap.out


def test_replay_rejects_non_trace(capsys, tmp_path):
    bad = tmp_path / "x.json"
    bad.write_text("[]")
    assert run(capsys, "replay", bad)[0] == 1


def test_bad_numeric_flag(capsys):
    with pytest.raises(SystemExit):
        cli.main(["run", "--program", str(C / "fig8.ifc"), "--budget", "0"])
