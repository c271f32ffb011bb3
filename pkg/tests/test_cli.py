import json

import pytest

from mrverify.cli import hand_script, main
from mrverify.config import RunConfig, from_dict, load_config
from mrverify.errors import ConfigError
from mrverify.metrics import load_report


def _toml(tmp_path, text):
    p = tmp_path / "run.toml"
    p.write_text(text)
    return p


# ------------------------------------------------------------------ config

def test_load_config_sections(tmp_path):
    cfg = load_config(_toml(tmp_path, """
seed = 3
alpha = 0.25
codec = "lossy:70"
perturb = "radius=2,jitter=2,miss=0.05"

[dataset]
count = 40
splits = ["test"]

[filter]
tint = [10, 20, 30]

[motion]
base_threshold = 0.1
"""))
    assert (cfg.seed, cfg.alpha, cfg.dataset.count, cfg.dataset.splits) == (3, 0.25, 40, ("test",))
    assert cfg.codec_spec().quality == 70
    assert cfg.filter.tint == (10, 20, 30)
    assert cfg.motion.base_threshold == 0.1
    assert cfg.perturbation().dilate_erode_radius == 2
    assert cfg.dataset_config().counts == {"test": 40}


@pytest.mark.parametrize("text", [
    "colour = 1",
    "[dataset]\nsize = 3",
    "[nosuch]\na = 1",
    "alpha = 1.5",
    "alpha = 0",
    "threshold = 2.0",
    "method = 'sift'",
    "segmenter = 'adapter'",
    "codec = 'gif'",
    "endpoint = 'nohost'",
    "perturb = 'radius=x'",
    "jobs = 0",
    "dataset = 3",
    "alpha = ",
])
def test_bad_config_rejected(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(_toml(tmp_path, text))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "none.toml")


def test_overrides():
    cfg = from_dict({"alpha": 0.3, "seed": 1})
    out = cfg.with_overrides(alpha=0.8, seed=None)
    assert (out.alpha, out.seed) == (0.8, 1)
    with pytest.raises(ConfigError):
        cfg.with_overrides(alpha=1.5)
    with pytest.raises(ConfigError):
        cfg.with_overrides(bogus=1)
    assert RunConfig().validate() == RunConfig()


def test_hand_script_shape():
    import numpy as np

    seq = hand_script(5, np.random.default_rng(0))
    runs = []
    for v in seq:
        if runs and runs[-1][0] == v:
            runs[-1][1] += 1
        else:
            runs.append([v, 1])
    assert sum(1 for v, _ in runs if v) == 5
    assert all(n >= 2 for v, n in runs if not v)
    assert seq[-2:] == [False, False]


# --------------------------------------------------------------------- cli

@pytest.fixture(scope="module")
def cli_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["make-fixtures", str(root / "src"), "--count", "6", "--seed", "2"]) == 0
    assert main(["gen-dataset", "--sources", str(root / "src"), "--count", "12", "--seed", "4",
                 "--out", str(root / "ds")]) == 0
    return root


def test_gen_dataset_balanced_and_deterministic(cli_data, tmp_path):
    m = json.loads((cli_data / "ds" / "test.json").read_text())
    assert (m["positives"], m["negatives"]) == (6, 6)
    assert main(["gen-dataset", "--sources", str(cli_data / "src"), "--count", "12", "--seed", "4",
                 "--out", str(tmp_path)]) == 0
    again = json.loads((tmp_path / "test.json").read_text())
    assert again["files"] == m["files"]
    assert again["samples"] == m["samples"]


def test_gen_dataset_missing_sources(tmp_path, capsys):
    missing = tmp_path / "absent"
    assert main(["gen-dataset", "--sources", str(missing), "--out", str(tmp_path)]) != 0
    assert str(missing) in capsys.readouterr().err


def test_invalid_alpha_flag(cli_data, capsys):
    rc = main(["evaluate", "--manifest", str(cli_data / "ds" / "test.json"), "--alpha", "1.5"])
    assert rc == 2
    assert "alpha" in capsys.readouterr().err


def test_flags_override_config(cli_data, tmp_path):
    cfg = _toml(tmp_path, 'alpha = 0.2\nmethod = "psnr"\n')
    out = tmp_path / "o"
    assert main(["evaluate", "--manifest", str(cli_data / "ds" / "test.json"), "--config", str(cfg),
                 "--alpha", "0.5", "--out", str(out)]) == 0
    r = load_report(out / "test_psnr.json")
    assert r.extra["alpha"] == 0.5


def test_evaluate_and_report(cli_data, tmp_path, capsys):
    out = tmp_path / "ev"
    assert main(["evaluate", "--manifest", str(cli_data / "ds" / "test.json"), "--out", str(out)]) == 0
    r = load_report(out / "test_iou.json")
    assert r.acc >= 0.99 and len(r.records) == 12
    assert (out / "test_iou_curve.csv").read_text().startswith("threshold,fpr,tpr,acc")
    capsys.readouterr()
    assert main(["report", str(out / "test_iou.json")]) == 0
    assert json.loads(capsys.readouterr().out)["samples"] == 12


def test_report_detects_tampering(cli_data, tmp_path):
    out = tmp_path / "ev"
    main(["evaluate", "--manifest", str(cli_data / "ds" / "test.json"), "--out", str(out)])
    p = out / "test_iou.json"
    data = json.loads(p.read_text())
    data["counts"]["tp"] += 1
    p.write_text(json.dumps(data))
    assert main(["report", str(p)]) == 1


def test_cosine_needs_stub(cli_data, tmp_path):
    man = str(cli_data / "ds" / "test.json")
    assert main(["evaluate", "--manifest", man, "--method", "cosine", "--out", str(tmp_path)]) == 2
    assert main(["evaluate", "--manifest", man, "--method", "cosine", "--stub-embeddings",
                 "--out", str(tmp_path)]) == 0
    assert load_report(tmp_path / "test_cosine.json").extra["embeddings"] == "stub"


def test_sweep(cli_data, tmp_path, capsys):
    assert main(["sweep", "--manifest", str(cli_data / "ds" / "val.json"), "--steps", "51",
                 "--out", str(tmp_path)]) == 0
    assert "best threshold" in capsys.readouterr().out
    assert (tmp_path / "val_iou_sweep_curve.csv").exists()


def test_simulate_and_session_report(cli_data, tmp_path, capsys):
    man = str(cli_data / "ds" / "test.json")
    assert main(["simulate", "--manifest", man, "--limit", "4", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "session.jsonl").read_text().splitlines()
    assert len(lines) == 4
    capsys.readouterr()
    assert main(["report", str(tmp_path / "session.jsonl")]) == 0
    assert "end_to_end_ms" in json.loads(capsys.readouterr().out)


def test_simulate_motion(cli_data, tmp_path, capsys):
    man = str(cli_data / "ds" / "test.json")
    assert main(["simulate", "--manifest", man, "--limit", "3", "--motion", "--camera",
                 "--out", str(tmp_path)]) == 0
    assert "3 targets" in capsys.readouterr().out


def test_bench_commands(cli_data, tmp_path):
    man = str(cli_data / "ds" / "test.json")
    assert main(["bench-codec", "--manifest", man, "--out", str(tmp_path)]) == 0
    assert main(["bench-alpha", "--manifest", man, "--alphas", "0.5,1.0", "--out", str(tmp_path)]) == 0
    assert main(["bench-alpha", "--manifest", man, "--alphas", "0.5,2", "--out", str(tmp_path)]) == 2
    assert main(["bench-kernels", "--size", "64", "--repeats", "1", "--out", str(tmp_path)]) == 0
    assert len((tmp_path / "bench_alpha.csv").read_text().splitlines()) == 3


def test_missing_manifest_is_runtime_error(tmp_path):
    assert main(["evaluate", "--manifest", str(tmp_path / "x.json")]) == 1


def test_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["evaluate"])
    assert info.value.code == 2
