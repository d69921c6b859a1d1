import glob
import os

import pytest

import cactosl
from cactosl import config as cfgmod

CONFIG_DIR = os.path.join(os.path.dirname(cactosl.__file__), "configs")


def test_minimal_config_fills_defaults():
    run = cfgmod.from_text("task.name = double_integrator\n")
    assert run.task.T == 200 and run.task.dt == 0.05
    assert run.trainer.k_s == 1000.0 and run.trainer.L == 50
    assert run.ddp.max_iters == 100
    assert run.seeds == [0]
    assert len(run.grid) == 176


def test_missing_required_key():
    with pytest.raises(cfgmod.ConfigError, match="task.name"):
        cfgmod.from_text("trainer.k_s = 0\n", "x.cfg")


@pytest.mark.parametrize("text, message", [
    ("task.name = dubins\ntrainer.kS = 3\n", "x.cfg:2: unknown key 'trainer.kS'"),
    ("task.name = dubins\ntask.name = dubins\n", "x.cfg:2: duplicate key"),
    ("task.name = dubins\nnot a pair\n", "x.cfg:2: expected 'key = value'"),
    ("task.name = dubins\n\ntrainer.L = 'five'\n", "x.cfg:3: 'trainer.L' expects int"),
    ("task.name = dubins\ntrainer.K_list = 5\n", "x.cfg:2: 'trainer.K_list' expects list"),
    ("task.name = dubins\ntask.T = 1 2\n", "x.cfg:2: cannot parse value"),
])
def test_errors_are_line_anchored(text, message):
    with pytest.raises(cfgmod.ConfigError) as exc:
        cfgmod.from_text(text, "x.cfg")
    assert message in str(exc.value)


def test_semantic_errors_become_config_errors():
    with pytest.raises(cfgmod.ConfigError, match="task.name"):
        cfgmod.from_text("task.name = unicycle\n")
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.from_text("task.name = dubins\ntrainer.tau = 3.0\n")
    with pytest.raises(cfgmod.ConfigError, match="seeds"):
        cfgmod.from_text("task.name = dubins\nrun.seeds = []\n")


def test_comments_and_types():
    run = cfgmod.from_text("""
        # comment line
        task.name = single_integrator   # trailing comment
        task.T = 50.0
        trainer.K_list = [10, 20]
        trainer.k_s = 0
        run.out_dir = runs/a-b_c
        run.ddp_trace = True
    """)
    assert run.task.T == 50 and isinstance(run.values["task.T"], int)
    assert run.trainer.K_list == (10, 20)
    assert run.trainer.k_s == 0.0 and isinstance(run.values["trainer.k_s"], float)
    assert run.out_dir == "runs/a-b_c"
    assert run.values["run.ddp_trace"] is True


def test_resolved_text_round_trips():
    run = cfgmod.from_text("task.name = dubins\ncost.alpha1 = 5\nrun.seeds = [1, 2]\n")
    text = run.resolved_text()
    again = cfgmod.from_text(text)
    assert again.values == run.values
    assert again.resolved_text() == text


def test_overrides():
    run = cfgmod.from_text("task.name = dubins\n", overrides={"run.seeds": [7]})
    assert run.seeds == [7]
    run2 = cfgmod.with_overrides(run, trainer__k_s=0.0)
    assert run2.trainer.k_s == 0.0 and run.trainer.k_s == 1000.0
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.with_overrides(run, trainer__nope=1)


def test_custom_obstacles_and_cost():
    run = cfgmod.from_text("task.name = single_integrator\n"
                           "cost.obstacles = [[1, 2, 3, 4]]\ncost.w_p = 0\n")
    (ob,) = run.task.cost.obstacles
    assert (ob.x, ob.y, ob.a, ob.b) == (1.0, 2.0, 3.0, 4.0)
    assert run.task.cost.w_p == 0.0


@pytest.mark.parametrize("path", sorted(glob.glob(os.path.join(CONFIG_DIR, "*.cfg"))))
def test_shipped_configs_load(path):
    run = cfgmod.load(path)
    assert run.seeds


def test_shipped_configs_present():
    names = {os.path.basename(p) for p in glob.glob(os.path.join(CONFIG_DIR, "*.cfg"))}
    assert {"single_integrator.cfg", "double_integrator.cfg", "dubins.cfg",
            "double_integrator_scaled.cfg"} <= names
