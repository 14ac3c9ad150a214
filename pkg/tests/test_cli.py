import json
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from rdeepsc import checkpoint
from rdeepsc.cli import main, prepare_data
from rdeepsc.config import ConfigError, RunConfig
from rdeepsc.metrics import read_report
from rdeepsc.plot import group_series, line_chart
from rdeepsc.text import desk_corpus_path, edit_count, load_corpus, read_jsonl
from rdeepsc.training import load_model, save_checkpoint, MiEstimator
from rdeepsc.transceiver import ModelConfig, RDeepSC

SMALL = ["--max-sentences", "60", "--seed", "3"]
TINY_MODEL = {"d_model": 16, "n_heads": 2, "d_ff": 32, "d_det": 8, "k_sym": 4, "n_layers": 1, "test_size": 12, "val_size": 8}


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.json"
    path.write_text(json.dumps(TINY_MODEL))
    return str(path)


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory, tiny_config):
    out = tmp_path_factory.mktemp("train")
    assert main(["train", "--config", tiny_config, *SMALL, "--epochs", "2", "--out", str(out)]) == 0
    return out


# -- configuration ---------------------------------------------------------------


def test_flags_override_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"alpha": 0.3, "beta": 0.7}))
    cfg = RunConfig.from_file(path).with_overrides(alpha=0.1, beta=None)
    assert (cfg.alpha, cfg.beta) == (0.1, 0.7)


@pytest.mark.parametrize(
    "changes, field",
    [
        ({"noise_ratio": 1.5}, "noise_ratio"),
        ({"adv": True, "epsilon": 0.0}, "epsilon"),
        ({"epsilon": -1.0}, "epsilon"),
        ({"channel": "fiber"}, "channel"),
        ({"corpus": "/no/such/file.txt"}, "corpus"),
        ({"d_model": 30, "n_heads": 4}, "n_heads"),
        ({"lr": 0.0}, "lr"),
        ({"noise_ratios": [0.2, -0.1]}, "noise_ratios"),
    ],
)
def test_validation_names_field(changes, field):
    with pytest.raises(ConfigError) as info:
        RunConfig().with_overrides(**changes).validate()
    assert info.value.field == field
    assert str(info.value).startswith(field)


def test_unknown_field_rejected():
    with pytest.raises(ConfigError, match="colour"):
        RunConfig.from_dict({"colour": "red"})


def test_cli_reports_config_error(capsys):
    assert main(["corrupt", "--noise-ratio", "2", "--out", "/tmp/unused"]) == 2
    assert "noise_ratio" in capsys.readouterr().err


def test_split_holds_out_tail():
    data = prepare_data(RunConfig(max_sentences=50, test_size=10))
    assert len(data.train) == 40 and len(data.test) == 10
    assert data.train + data.test == load_corpus(desk_corpus_path(), 50)


# -- corrupt ----------------------------------------------------------------------


def test_corrupt_histogram_and_reproducible(tmp_path, capsys):
    args = ["corrupt", *SMALL, "--noise-ratio", "0.2"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    printed = capsys.readouterr().out
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    first = (tmp_path / "a" / "corrupted.jsonl").read_bytes()
    assert first == (tmp_path / "b" / "corrupted.jsonl").read_bytes()
    records = read_jsonl(tmp_path / "a" / "corrupted.jsonl")
    expected = sum(edit_count(0.2, len(r["clean"].split())) for r in records)
    total = int(printed.strip().splitlines()[-1].split()[-1])
    assert total == expected == sum(sum(r["labels"]) for r in records)


def test_corrupt_high_ratio_label_mass(tmp_path):
    assert main(["corrupt", "--max-sentences", "200", "--noise-ratio", "0.6", "--out", str(tmp_path)]) == 0
    records = read_jsonl(tmp_path / "corrupted.jsonl")
    labels = np.mean([sum(r["labels"]) for r in records])
    lengths = np.mean([len(r["clean"].split()) for r in records])
    assert abs(labels - 0.6 * lengths) <= 1.0


# -- train ------------------------------------------------------------------------


def test_train_writes_checkpoints_and_summary(trained_run):
    assert (trained_run / "epoch_001.rdsc").exists() and (trained_run / "epoch_002.rdsc").exists()
    header = (trained_run / "train_log.csv").read_text().splitlines()[0]
    assert "adv_total" not in header
    _, meta = checkpoint.load(trained_run / "epoch_002.rdsc")
    assert meta["epoch"] == 2 and meta["run_config"]["seed"] == 3 and meta["vocab"][0] == "<pad>"


def test_train_adv_log_column(tmp_path, tiny_config, capsys):
    assert main(["train", "--config", tiny_config, *SMALL, "--epochs", "1", "--adv", "--out", str(tmp_path)]) == 0
    assert "best validation BLEU" in capsys.readouterr().out
    assert (tmp_path / "train_log.csv").read_text().splitlines()[0].endswith("adv_total")


def test_train_resume_matches_uninterrupted(tmp_path, trained_run, tiny_config):
    out = tmp_path / "resumed"
    args = ["train", "--config", tiny_config, *SMALL, "--epochs", "2", "--out", str(out)]
    assert main([*args, "--resume", str(trained_run / "epoch_001.rdsc")]) == 0
    resumed, rmeta = checkpoint.load(out / "epoch_002.rdsc")
    straight, smeta = checkpoint.load(trained_run / "epoch_002.rdsc")
    assert resumed.keys() == straight.keys()
    assert all(np.array_equal(resumed[k], straight[k]) for k in resumed)
    assert rmeta["rng"] == smeta["rng"] and rmeta["adam_step"] == smeta["adam_step"]
    full = (trained_run / "train_log.csv").read_text().splitlines()
    assert (out / "train_log.csv").read_text().splitlines()[-1] == full[-1]


def test_train_is_reproducible(tmp_path, trained_run, tiny_config):
    out = tmp_path / "again"
    assert main(["train", "--config", tiny_config, *SMALL, "--epochs", "2", "--out", str(out)]) == 0
    assert (out / "train_log.csv").read_bytes() == (trained_run / "train_log.csv").read_bytes()
    for name in ("epoch_001.rdsc", "epoch_002.rdsc"):
        a, _ = checkpoint.load(out / name)
        b, _ = checkpoint.load(trained_run / name)
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)


# -- checkpoints ------------------------------------------------------------------


def test_save_load_save_byte_identical(tmp_path, trained_run):
    tensors, meta = checkpoint.load(trained_run / "epoch_002.rdsc")
    checkpoint.save(tmp_path / "copy.rdsc", tensors, meta)
    assert (tmp_path / "copy.rdsc").read_bytes() == (trained_run / "epoch_002.rdsc").read_bytes()


def test_model_round_trip_is_float32_exact(tmp_path):
    model = RDeepSC(ModelConfig(vocab_size=20, d_model=8, n_heads=2, d_ff=16, k_sym=2, d_det=4, max_len=8), seed=1)
    save_checkpoint(tmp_path / "m.rdsc", model, MiEstimator(8, 4), None, {"epoch": 0})
    loaded, _ = load_model(tmp_path / "m.rdsc")
    for (name, p), (_, q) in zip(model.named_parameters(), loaded.named_parameters()):
        assert np.array_equal(q.data, p.data.astype(np.float32).astype(np.float64)), name


def test_truncated_checkpoint_rejected(tmp_path, trained_run):
    data = (trained_run / "epoch_002.rdsc").read_bytes()
    for cut in (3, 20, len(data) // 2, len(data) - 1):
        (tmp_path / "cut.rdsc").write_bytes(data[:cut])
        with pytest.raises(checkpoint.CheckpointError):
            load_model(tmp_path / "cut.rdsc")


def test_bad_magic_and_version(tmp_path, trained_run):
    data = bytearray((trained_run / "epoch_002.rdsc").read_bytes())
    (tmp_path / "magic.rdsc").write_bytes(b"XXXX" + bytes(data[4:]))
    with pytest.raises(checkpoint.CheckpointError, match="magic"):
        checkpoint.load(tmp_path / "magic.rdsc")
    data[4] = 99
    (tmp_path / "ver.rdsc").write_bytes(bytes(data))
    with pytest.raises(checkpoint.CheckpointError, match="version"):
        checkpoint.load(tmp_path / "ver.rdsc")


def test_dimension_mismatch_names_tensor(trained_run):
    tensors, _ = checkpoint.load(trained_run / "epoch_002.rdsc")
    cfg = ModelConfig(vocab_size=tensors["model.embedding"].shape[0], d_model=32, n_heads=2, d_ff=32, k_sym=4, d_det=8, n_enc_layers=1, n_dec_layers=1)
    wider = RDeepSC(cfg)
    from rdeepsc.training import restore

    with pytest.raises(checkpoint.DimensionMismatch, match="model.embedding"):
        restore(tensors, wider)


# -- eval, baseline, plot ---------------------------------------------------------


def test_eval_grid_rows_and_reproducible(tmp_path, trained_run, tiny_config):
    ckpt = str(trained_run / "epoch_002.rdsc")
    args = ["eval", "--config", tiny_config, *SMALL, "--checkpoint", ckpt, "--channel", "awgn"]
    assert main([*args, "--out", str(tmp_path / "a"), "--plot", str(tmp_path / "a.svg")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    rows = read_report(tmp_path / "a" / "eval.csv")
    assert len(rows) == 14
    assert sorted({r.snr_db for r in rows}) == [0.0, 3.0, 6.0, 9.0, 12.0, 15.0, 18.0]
    assert {r.noise_ratio for r in rows} == {0.0, 0.2}
    assert (tmp_path / "a" / "eval.csv").read_bytes() == (tmp_path / "b" / "eval.csv").read_bytes()
    svg = ET.parse(tmp_path / "a.svg").getroot()
    labels = {el.get("data-series") for el in svg.iter() if el.get("data-series")}
    assert labels == set(group_series(rows))


def test_eval_both_channels(tmp_path, trained_run, tiny_config):
    args = ["eval", "--config", tiny_config, *SMALL, "--checkpoint", str(trained_run / "epoch_002.rdsc")]
    assert main([*args, "--snr-list", "6,12", "--noise-ratios", "0.2", "--out", str(tmp_path)]) == 0
    rows = read_report(tmp_path / "eval.csv")
    assert [(r.channel, r.snr_db) for r in rows] == [("awgn", 6.0), ("awgn", 12.0), ("rayleigh", 6.0), ("rayleigh", 12.0)]


def test_eval_rejects_missing_checkpoint(tmp_path, capsys):
    assert main(["eval", *SMALL, "--checkpoint", str(tmp_path / "none.rdsc"), "--out", str(tmp_path)]) == 2
    assert "none.rdsc" in capsys.readouterr().err


def test_baseline_identity_and_reproducible(tmp_path):
    args = ["baseline", *SMALL, "--channel", "identity", "--snr-list", "18", "--noise-ratios", "0"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    (row,) = read_report(tmp_path / "a" / "baseline.csv")
    assert row.model_id == "classical" and row.bleu == 1.0 and math.isnan(row.sim_score)
    assert (tmp_path / "a" / "baseline.csv").read_bytes() == (tmp_path / "b" / "baseline.csv").read_bytes()


def test_plot_command_covers_all_series(tmp_path, trained_run, tiny_config):
    main(["baseline", *SMALL, "--snr-list", "6,18", "--out", str(tmp_path)])
    main(["eval", "--config", tiny_config, *SMALL, "--checkpoint", str(trained_run / "epoch_002.rdsc"), "--snr-list", "6,18", "--out", str(tmp_path)])
    csvs = [str(tmp_path / "baseline.csv"), str(tmp_path / "eval.csv")]
    assert main(["plot", *csvs, "--out", str(tmp_path / "all.svg")]) == 0
    rows = read_report(csvs[0]) + read_report(csvs[1])
    svg = ET.parse(tmp_path / "all.svg").getroot()
    ns = "{http://www.w3.org/2000/svg}"
    assert len(svg.findall(f"{ns}polyline")) == len(group_series(rows)) == 8


def test_line_chart_handles_single_point():
    root = ET.fromstring(line_chart({"only": [(12.0, 0.5)]}, title="a & b"))
    assert root.tag.endswith("svg")
