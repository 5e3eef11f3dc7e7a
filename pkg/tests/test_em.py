import random

import pytest
from hypothesis import assume, given, settings

from mrenforce import CORPUS, default_env, em, example_trace, lang, load_example, policies
from mrenforce.lang import q
from mrenforce.policies import get_policy

from strategies import queues, statements

SHIPPED = ("ri", "ni", "di", "subdi")


def step_until(cfg, label_prefix, limit=200):
    """Follow the lowest-index schedule until a label with ``label_prefix`` is enabled."""
    for _ in range(limit):
        labels = em.enabled(cfg)
        hit = [lb for lb in labels if lb.startswith(label_prefix)]
        if hit:
            return cfg, hit[0]
        cfg, _ = em.step(cfg, labels[0])
    raise AssertionError(f"{label_prefix} never enabled")


def events_of(cfg, label):
    _, events = em.step(cfg, label)
    return events


# initial configurations

def test_init_two_executing_copies(fig8, fig9_input):
    prog, env = fig8
    cfg = em.init_em(prog, get_policy("ri"), fig9_input, env)
    assert len(cfg.ex) == 2 and cfg.top == 1
    assert all(e.stt == em.EXECUTING and e.inq == () and e.outq == () for e in cfg.ex)
    assert cfg.map.idle and cfg.red.idle


@pytest.mark.parametrize("name", SHIPPED)
def test_skip_is_complete_from_the_start(name):
    cfg = em.init_em(lang.SKIP, get_policy(name), (), default_env())
    assert em.enabled(cfg) == []
    assert em.classify(cfg) == em.COMPLETED


def test_input_on_undeclared_channel_rejected():
    with pytest.raises(lang.ChannelError):
        em.init_em(lang.SKIP, get_policy("ri"), q(("cX", 1)), default_env())


# enabled transitions and single steps

def test_both_copies_block_on_first_input(fig8, fig9_input):
    prog, env = fig8
    cfg = em.init_em(prog, get_policy("ri"), fig9_input, env)
    assert em.enabled(cfg) == ["local:0:LINP2", "local:1:LINP2"]


def test_sleeping_requester_activates_map(fig8, fig9_input):
    prog, env = fig8
    cfg = em.init_em(prog, get_policy("ri"), fig9_input, env)
    cfg, _ = em.step(cfg, "local:0:LINP2")
    assert "mact:0:cH1" in em.enabled(cfg)
    after, events = em.step(cfg, "mact:0:cH1")
    assert after.ex[0].stt == em.SLEEPING and after.ex[0].sig is None
    assert after.map.prg == get_policy("ri").instantiate(env).handler("map", 0, "cH1")
    assert events == [("activate", "map", 0, "cH1")]


def test_not_enabled_label_raises(fig8):
    prog, env = fig8
    cfg = em.init_em(prog, get_policy("ri"), (), env)
    with pytest.raises(em.NotEnabled):
        em.step(cfg, "mact:0:cH1")


def test_ri_high_value_reaches_high_copy_only(fig8, fig9_input):
    prog, env = fig8
    res = em.run_enforced(prog, get_policy("ri"), fig9_input, env, em.SchedulerSpec("lowest"))
    delivered = [ev[2:] for ev in res.log if ev[1] == "deliver" and ev[2] == "cH1"]
    assert ("cH1", True, (0,)) in delivered
    assert ("cH1", False, (1,)) in delivered


def test_ri_low_request_on_high_channel_reads_real_item(fig8, fig9_input):
    prog, env = fig8
    res = em.run_enforced(prog, get_policy("ri"), fig9_input, env)
    reads = [(c, v, who) for _, c, v, who in res.reads if c == "cH2"]
    assert reads == [("cH2", 7, 1)]
    delivered = {ev[4]: ev[3] for ev in res.log if ev[1] == "deliver" and ev[2] == "cH2"}
    assert delivered == {(0,): 7, (1,): 0}


def test_ni_low_request_on_high_channel_gets_default_without_read(fig8, fig9_input):
    prog, env = fig8
    res = em.run_enforced(prog, get_policy("ni"), fig9_input, env)
    assert all(c != "cH2" for _, c, _, _ in res.reads)
    assert [ev[3:] for ev in res.log if ev[1] == "deliver" and ev[2] == "cH2"] == [(0, (1,))]


def test_ni_low_channel_read_feeds_both_copies(fig8, fig9_input):
    prog, env = fig8
    res = em.run_enforced(prog, get_policy("ni"), fig9_input, env)
    assert [ev[3:] for ev in res.log if ev[1] == "deliver" and ev[2] == "cL1"] == [(False, (0, 1))]


def test_high_copy_without_ask_waits(fig8, fig9_input):
    prog, env = fig8
    pol = get_policy("ri")
    cfg = em.init_em(prog, pol, fig9_input, env)
    handler = pol.instantiate(env).handler("map", 0, "cL1")
    # the handler only acts when the requester holds ask on the channel
    assert not cfg.t_m.has(0, "cL1", "a")
    assert isinstance(handler, lang.If)


def test_di_clones_once_before_first_high_read(fig8, fig9_input):
    prog, env = fig8
    res = em.run_enforced(prog, get_policy("di"), fig9_input, env)
    clone_steps = [ev[0] for ev in res.log if ev[1] == "clone"]
    first_high_read = min(s for s, c, _, _ in res.reads if env[c].level == "H")
    assert len(clone_steps) == 1 and clone_steps[0] < first_high_read
    assert res.final.t_m.columns == 3 and res.final.t_r.columns == 3
    assert res.final.t_m.as_dict()["cH1"][2] == "a"
    assert res.final.t_m.as_dict()["cL1"][2] == "t"
    assert res.final.t_r.as_dict()["cL3"][2] == "-"


def test_clone_step_shape(fig8, fig9_input):
    prog, env = fig8
    cfg = em.init_em(prog, get_policy("di"), fig9_input, env)
    cfg, label = step_until(cfg, "map::CLON")
    after, events = em.step(cfg, label)
    assert after.top == 2
    assert after.ex[2].stt == em.SLEEPING
    assert after.ex[2].prg == cfg.ex[0].prg and after.ex[2].mem == cfg.ex[0].mem
    assert events == [("clone", 0, 2)]


def test_di_clone_never_writes_globally(fig8, fig9_input):
    prog, env = fig8
    for seed in range(10):
        res = em.run_enforced(prog, get_policy("di"), fig9_input, env, em.SchedulerSpec("random", seed))
        assert all(w.source_exec in (0, 1) for w in res.writes)
        assert all(who != 2 for _, _, _, who in res.reads)


def test_subdi_matches_ni_without_low_high_requests():
    prog, env = load_example("low_only")
    inq = q(("cL2", 3))
    a = em.run_enforced(prog, get_policy("ni"), inq, env)
    b = em.run_enforced(prog, get_policy("subdi"), inq, env)
    assert (a.outcome, a.global_out, a.residual) == (b.outcome, b.global_out, b.residual)


# whole runs

def test_fig9_ri(fig8, fig9_input):
    prog, env = fig8
    res = em.run_enforced(prog, get_policy("ri"), fig9_input, env)
    assert res.outcome == em.COMPLETED
    assert res.global_out == q(("cH3", 2), ("cL3", 2))
    assert res.consumed == fig9_input


def test_fig13_ni(fig8, fig9_input):
    prog, env = fig8
    res = em.run_enforced(prog, get_policy("ni"), fig9_input, env)
    assert res.outcome == em.QUIESCENT
    assert res.residual == q(("cH2", 7))
    assert res.global_out == q(("cH3", 2), ("cL3", 2))


def test_di_example(fig8, fig9_input):
    prog, env = fig8
    res = em.run_enforced(prog, get_policy("di"), fig9_input, env)
    assert res.clone_count == 1 and len(res.executions) == 3
    assert res.global_out == q(("cH3", 2), ("cL3", 2))
    assert res.residual == q(("cH2", 7))


def test_subdi_deadlocks_on_fig14c():
    prog, env = load_example("fig14c")
    res = em.run_enforced(prog, get_policy("subdi"), example_trace("fig14c"), env)
    assert res.outcome == em.DEADLOCKED
    assert "execution 0: asleep waiting for input on cL2" in res.reasons


def test_divergent_program_exceeds_budget():
    res = em.run_enforced(lang.parse_program("while T do { skip }"), get_policy("ri"), (), default_env(),
                          budget=300)
    assert res.outcome == em.BUDGET and res.steps == 300


def test_consumed_is_per_channel_prefix():
    orig = q(("cH1", True), ("cL1", False), ("cH1", False))
    assert em.consumed_of(orig, q(("cH1", False))) == q(("cH1", True), ("cL1", False))


# schedulers and replay

@pytest.mark.parametrize("name", SHIPPED)
def test_replay_over_many_seeds(name, fig8, fig9_input):
    prog, env = fig8
    pol = get_policy(name)
    for seed in range(25):
        res = em.run_enforced(prog, pol, fig9_input, env, em.SchedulerSpec("random", seed))
        again = em.replay(prog, pol, fig9_input, env, res.schedule)
        assert again.schedule == res.schedule
        assert again.final == res.final
        assert again.writes == res.writes and again.reads == res.reads
        assert again.outcome == res.outcome


def test_same_seed_same_run(fig8, fig9_input):
    prog, env = fig8
    a = em.run_enforced(prog, get_policy("di"), fig9_input, env, em.SchedulerSpec("random", 7))
    b = em.run_enforced(prog, get_policy("di"), fig9_input, env, em.SchedulerSpec("random", 7))
    assert a.schedule == b.schedule and a.final == b.final


def test_tampered_schedule_diverges(fig8, fig9_input):
    prog, env = fig8
    res = em.run_enforced(prog, get_policy("ri"), fig9_input, env)
    bad = list(res.schedule)
    bad[0] = "map::MAP"
    with pytest.raises(em.ReplayDivergence) as err:
        em.replay(prog, get_policy("ri"), fig9_input, env, bad)
    assert err.value.step_no == 0


# structural invariants

@pytest.mark.parametrize("name", SHIPPED)
@pytest.mark.parametrize("prog_name", ["fig8", "fig12a", "fig12b", "fig14c", "secure_sum"])
def test_signal_hygiene_and_stack_invariants(name, prog_name):
    prog, env = load_example(prog_name)
    rng = random.Random(f"{name}/{prog_name}")
    items = [lang.IoItem(c.name, v) for c in env.inputs
             for v in ((False, True) if c.kind == "bool" else (0, 2))]
    for seed in range(8):
        inq = tuple(rng.choice(items) for _ in range(rng.randrange(5)))
        em.run_enforced(prog, get_policy(name), inq, env, em.SchedulerSpec("random", seed),
                        budget=2000, check_invariants=True)


def test_frame_condition_fuzz():
    """Every transition changes only the fields its rule may touch."""
    rng = random.Random(2024)
    transitions = 0
    while transitions < 1000:
        prog_name = rng.choice(["fig8", "fig12a", "fig12b", "fig14c", "secure_sum", "high_branch"])
        prog, env = load_example(prog_name)
        pol = get_policy(rng.choice(SHIPPED))
        items = [lang.IoItem(c.name, v) for c in env.inputs
                 for v in ((False, True) if c.kind == "bool" else (0, 1, 7))]
        inq = tuple(rng.choice(items) for _ in range(rng.randrange(6)))
        cfg = em.init_em(prog, pol, inq, env)
        for _ in range(150):
            labels = em.enabled(cfg)
            if not labels:
                break
            label = rng.choice(labels)
            after, _ = em.step(cfg, label)
            assert em.frame_ok(label, cfg, after), (label, em.changed_fields(cfg, after))
            em.check_step(cfg, label, after)
            cfg = after
            transitions += 1


def test_frame_check_detects_stray_change(fig8, fig9_input):
    prog, env = fig8
    cfg = em.init_em(prog, get_policy("ri"), fig9_input, env)
    after, _ = em.step(cfg, "local:0:LINP2")
    tampered = em._with(after, inq=())
    assert not em.frame_ok("local:0:LINP2", cfg, tampered)


@pytest.mark.parametrize("name", ["ri", "ni", "di"])
def test_io_attribution_on_corpus(name):
    for prog_name in ["fig8", "fig12a", "fig12b", "fig14c", "secure_sum", "high_branch"]:
        prog, env = load_example(prog_name)
        items = [lang.IoItem(c.name, v) for c in env.inputs
                 for v in ((False, True) if c.kind == "bool" else (0, 3))]
        rng = random.Random(prog_name)
        for seed in range(6):
            inq = tuple(rng.choice(items) for _ in range(rng.randrange(5)))
            res = em.run_enforced(prog, get_policy(name), inq, env, em.SchedulerSpec("random", seed), 3000)
            assert em.check_io_props(res, name, env) == []


# a single fully privileged execution behaves like the bare program

STATUS = {"terminated": em.COMPLETED, "residual": em.QUIESCENT, "stuck": em.DEADLOCKED}


@settings(max_examples=150, deadline=None)
@given(statements(), queues(4))
def test_identity_policy_matches_bare_program(prog, inq):
    env = default_env()
    bare = lang.run_program(prog, inq, 400, env)
    assume(bare.status != "budget")
    res = em.run_enforced(prog, get_policy("identity"), inq, env, budget=40_000, mode="head")
    assert res.outcome == STATUS[bare.status]
    assert res.global_out == bare.out
    assert res.residual == bare.residual


@settings(max_examples=100, deadline=None)
@given(statements(loops=False), queues(4))
def test_identity_policy_channel_mode_on_terminating_inputs(prog, inq):
    env = default_env()
    bare = lang.run_program(prog, inq, 400, env)
    assume(bare.status == "terminated")
    res = em.run_enforced(prog, get_policy("identity"), inq, env, budget=40_000)
    assert res.outcome == em.COMPLETED and res.global_out == bare.out


# exploration

def test_explore_fig8_ri_singleton(fig8, fig9_input):
    prog, env = fig8
    res = em.explore(prog, get_policy("ri"), fig9_input, env)
    assert res.singleton and not res.partial
    (cls,) = res.classes
    assert cls[0] == em.COMPLETED
    assert cls[2] == lang.per_channel(q(("cH3", 2), ("cL3", 2)))


def test_explore_fig14c():
    prog, env = load_example("fig14c")
    inq = example_trace("fig14c")
    assert em.DEADLOCKED in em.explore(prog, get_policy("subdi"), inq, env).outcomes()
    assert em.explore(prog, get_policy("ri"), inq, env).outcomes() == {em.COMPLETED}


def test_explore_skip():
    res = em.explore(lang.SKIP, get_policy("di"), (), default_env())
    assert res.outcomes() == {em.COMPLETED} and res.singleton


def test_explore_divergence_is_budget_class():
    res = em.explore(lang.parse_program("while T do { skip }"), get_policy("ri"), (), default_env(), depth=50)
    assert res.outcomes() == {em.BUDGET}


def test_explore_reduction_keeps_classes():
    prog, env = load_example("secure_sum")
    inq = q(("cL2", 1), ("cH2", 2))
    for name in ("ri", "ni", "di"):
        full = em.explore(prog, get_policy(name), inq, env, reduce=False)
        red = em.explore(prog, get_policy(name), inq, env)
        assert full.classes == red.classes and red.states <= full.states


def test_frontier_cap_marks_partial(fig8, fig9_input):
    prog, env = fig8
    assert em.explore(prog, get_policy("di"), fig9_input, env, max_states=50).partial
