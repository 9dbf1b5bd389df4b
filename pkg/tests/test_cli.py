import json

import pytest

from xcal import cli


def run(args):
    return cli.main([str(a) for a in args])


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    truth = root / "truth.txt"
    preds = root / "dump.tsv"
    rc = run([
        "generate", "--n", 3000, "--m", 300, "--k", 5,
        "--distort", "temperature:0.5", "--seed", 7,
        "--out-truth", truth, "--out-preds", preds,
    ])
    assert rc == 0
    return root, truth, preds


class TestGenerate:
    def test_deterministic_files(self, generated, tmp_path):
        root, truth, preds = generated
        truth2 = tmp_path / "truth.txt"
        preds2 = tmp_path / "dump.tsv"
        rc = run([
            "generate", "--n", 3000, "--m", 300, "--k", 5,
            "--distort", "temperature:0.5", "--seed", 7,
            "--out-truth", truth2, "--out-preds", preds2,
        ])
        assert rc == 0
        assert truth2.read_bytes() == truth.read_bytes()
        assert preds2.read_bytes() == preds.read_bytes()

    def test_prints_analytic_ece(self, tmp_path, capsys):
        rc = run([
            "generate", "--n", 500, "--m", 100, "--k", 3, "--seed", 1,
            "--out-truth", tmp_path / "t.txt", "--out-preds", tmp_path / "p.tsv",
        ])
        assert rc == 0
        out = capsys.readouterr().out
        assert "analytic ECE@3" in out
        # identity distortion: analytic error well under half a percent
        value = float(out.strip().rsplit(" ", 1)[-1].rstrip("%"))
        assert value < 0.5

    def test_bad_distortion_is_config_error(self, tmp_path):
        rc = run([
            "generate", "--n", 10, "--m", 10, "--k", 2, "--distort", "banana",
            "--out-truth", tmp_path / "t.txt", "--out-preds", tmp_path / "p.tsv",
        ])
        assert rc == 3

    def test_default_overconfident_world_lands_in_band(self, tmp_path, capsys):
        rc = run([
            "generate", "--n", 20000, "--m", 1000, "--k", 5,
            "--distort", "temperature:0.5", "--seed", 7,
            "--out-truth", tmp_path / "t.txt", "--out-preds", tmp_path / "p.tsv",
        ])
        assert rc == 0
        value = float(capsys.readouterr().out.strip().rsplit(" ", 1)[-1].rstrip("%"))
        assert 10.0 <= value <= 30.0


class TestEvaluate:
    def test_report_structure(self, generated, tmp_path):
        _, truth, preds = generated
        out = tmp_path / "report.json"
        rc = run(["evaluate", "--truth", truth, "--preds", preds,
                  "--k", "1,3,5", "--bins", 10, "--out", out])
        assert rc == 0
        report = json.loads(out.read_text())
        assert report["units"] == "percent"
        assert [b["k"] for b in report["k_blocks"]] == [1, 3, 5]
        blk = report["k_blocks"][2]
        assert len(blk["reliability"]) == 10
        assert len(blk["histogram"]) == 10
        assert sum(r["count"] for r in blk["histogram"]) == blk["pairs"]
        assert blk["ece"] > 5.0  # percent units

    def test_byte_identical_reruns(self, generated, tmp_path):
        _, truth, preds = generated
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        assert run(["evaluate", "--truth", truth, "--preds", preds, "--out", a]) == 0
        assert run(["evaluate", "--truth", truth, "--preds", preds, "--out", b]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_json_round_trip(self, generated, tmp_path):
        _, truth, preds = generated
        out = tmp_path / "r.json"
        run(["evaluate", "--truth", truth, "--preds", preds, "--out", out])
        text = out.read_text()
        assert json.dumps(json.loads(text), indent=2) + "\n" == text

    def test_alignment_mismatch_exit_2(self, generated, tmp_path):
        _, truth, preds = generated
        short = tmp_path / "short.tsv"
        lines = preds.read_text().splitlines(True)[:-1]
        short.write_text("".join(lines))
        rc = run(["evaluate", "--truth", truth, "--preds", short, "--out", tmp_path / "x.json"])
        assert rc == 2

    def test_parse_error_exit_1(self, generated, tmp_path):
        _, truth, _ = generated
        bad = tmp_path / "bad.tsv"
        bad.write_text("0\t1:2.5\n")
        rc = run(["evaluate", "--truth", truth, "--preds", bad, "--out", tmp_path / "x.json"])
        assert rc == 1

    def test_streaming_matches_batch(self, generated, tmp_path):
        _, truth, preds = generated
        a = tmp_path / "batch.json"
        b = tmp_path / "stream.json"
        run(["evaluate", "--truth", truth, "--preds", preds, "--k", "5", "--out", a])
        run(["evaluate", "--truth", truth, "--preds", preds, "--k", "5", "--streaming", "--out", b])
        batch = json.loads(a.read_text())["k_blocks"][0]
        stream = json.loads(b.read_text())["k_blocks"][0]
        assert stream["ace"] is None
        assert stream["ece"] == pytest.approx(batch["ece"], abs=1e-9)
        assert stream["p_at_k"] == pytest.approx(batch["p_at_k"], abs=1e-9)

    def test_strict_ids(self, generated, tmp_path):
        _, truth, preds = generated
        shifted = tmp_path / "shifted.tsv"
        out_lines = []
        for line in preds.read_text().splitlines(True):
            head, tail = line.split("\t", 1)
            # bump every instance id by one: still increasing, no longer 0-based
            out_lines.append(str(int(head) + 1) + "\t" + tail)
        shifted.write_text("".join(out_lines))
        ok = tmp_path / "ok.json"
        assert run(["evaluate", "--truth", truth, "--preds", shifted, "--out", ok]) == 0
        rc = run(["evaluate", "--truth", truth, "--preds", shifted, "--strict-ids",
                  "--out", tmp_path / "x.json"])
        assert rc == 2
        rc = run(["evaluate", "--truth", truth, "--preds", shifted, "--strict-ids",
                  "--streaming", "--out", tmp_path / "y.json"])
        assert rc == 2

    def test_csv_format(self, generated, tmp_path):
        _, truth, preds = generated
        out = tmp_path / "report.csv"
        run(["evaluate", "--truth", truth, "--preds", preds, "--k", "1,3", "--format", "csv", "--out", out])
        lines = out.read_text().splitlines()
        assert lines[0] == "k,ece,ace,brier,nll,p_at_k,ndcg_at_k,pairs"
        assert len(lines) == 3

    def test_identity_world_evaluates_calibrated(self, tmp_path):
        truth = tmp_path / "t.txt"
        preds = tmp_path / "p.tsv"
        run(["generate", "--n", 50000, "--m", 500, "--k", 5, "--seed", 2,
             "--out-truth", truth, "--out-preds", preds])
        out = tmp_path / "r.json"
        assert run(["evaluate", "--truth", truth, "--preds", preds,
                    "--k", "1,3,5", "--out", out]) == 0
        for blk in json.loads(out.read_text())["k_blocks"]:
            assert blk["ece"] < 1.0  # percent

    def test_baseline_deltas(self, generated, tmp_path):
        _, truth, preds = generated
        base = tmp_path / "base.json"
        run(["evaluate", "--truth", truth, "--preds", preds, "--k", "1", "--out", base])
        out = tmp_path / "with_deltas.json"
        run(["evaluate", "--truth", truth, "--preds", preds, "--k", "1",
             "--baseline", base, "--out", out])
        report = json.loads(out.read_text())
        assert report["deltas"][0]["ece"] == 0.0


class TestRecalibrate:
    def test_full_flow(self, generated, tmp_path):
        _, truth, preds = generated
        out_preds = tmp_path / "recal.tsv"
        out_report = tmp_path / "recal.json"
        rc = run(["recalibrate", "--truth", truth, "--preds", preds,
                  "--method", "isotonic", "--mode", "joint",
                  "--folds", 5, "--seed", 3,
                  "--out-preds", out_preds, "--out-report", out_report])
        assert rc == 0
        report = json.loads(out_report.read_text())
        for pre, post, delta in zip(report["pre"], report["post"], report["deltas"]):
            assert post["ece"] < pre["ece"]
            assert delta["p_at_k"] == 0.0
            assert delta["ndcg_at_k"] == 0.0
        # recalibrated dump parses and aligns
        rc = run(["evaluate", "--truth", truth, "--preds", out_preds,
                  "--out", tmp_path / "post.json"])
        assert rc == 0

    def test_separate_mode_may_change_precision(self, generated, tmp_path):
        _, truth, preds = generated
        out_report = tmp_path / "sep.json"
        rc = run(["recalibrate", "--truth", truth, "--preds", preds,
                  "--mode", "separate", "--folds", 5, "--seed", 3,
                  "--out-preds", tmp_path / "sep.tsv", "--out-report", out_report])
        assert rc == 0
        report = json.loads(out_report.read_text())
        assert "deltas" in report  # nonzero deltas allowed and reported

    def test_folds_1_usage_error(self, generated, tmp_path):
        _, truth, preds = generated
        rc = run(["recalibrate", "--truth", truth, "--preds", preds,
                  "--folds", 1, "--out-preds", tmp_path / "x.tsv"])
        assert rc == 3


class TestPlotdata:
    def test_from_report(self, generated, tmp_path):
        _, truth, preds = generated
        report = tmp_path / "report.json"
        run(["evaluate", "--truth", truth, "--preds", preds, "--k", "3", "--out", report])
        rel = tmp_path / "rel.csv"
        hist = tmp_path / "hist.csv"
        rc = run(["plotdata", "--report", report, "--k", 3,
                  "--out-reliability", rel, "--out-histogram", hist])
        assert rc == 0
        rel_lines = rel.read_text().splitlines()
        hist_lines = hist.read_text().splitlines()
        assert rel_lines[0] == "bin_low,bin_high,mean_conf,mean_acc,count"
        assert len(rel_lines) == 11  # header + one row per bin
        total = sum(int(line.rsplit(",", 1)[1]) for line in hist_lines[1:])
        report_pairs = json.loads(report.read_text())["k_blocks"][0]["pairs"]
        assert total == report_pairs

    def test_from_raw_inputs(self, generated, tmp_path):
        _, truth, preds = generated
        rc = run(["plotdata", "--truth", truth, "--preds", preds, "--k", 5,
                  "--out-reliability", tmp_path / "r.csv",
                  "--out-histogram", tmp_path / "h.csv"])
        assert rc == 0

    def test_requires_k_for_multi_block_report(self, generated, tmp_path):
        _, truth, preds = generated
        report = tmp_path / "multi.json"
        run(["evaluate", "--truth", truth, "--preds", preds, "--k", "1,3", "--out", report])
        rc = run(["plotdata", "--report", report,
                  "--out-reliability", tmp_path / "r.csv",
                  "--out-histogram", tmp_path / "h.csv"])
        assert rc == 3

    def test_calibrated_input_bins_on_diagonal(self, tmp_path):
        truth = tmp_path / "t.txt"
        preds = tmp_path / "p.tsv"
        run(["generate", "--n", 30000, "--m", 300, "--k", 5, "--seed", 9,
             "--out-truth", truth, "--out-preds", preds])
        rel = tmp_path / "rel.csv"
        run(["plotdata", "--truth", truth, "--preds", preds, "--k", 5,
             "--out-reliability", rel, "--out-histogram", tmp_path / "h.csv"])
        import math

        for line in rel.read_text().splitlines()[1:]:
            _, _, conf, acc, count = line.split(",")
            count = int(count)
            if count < 50:
                continue
            conf, acc = float(conf), float(acc)
            se = math.sqrt(max(conf * (1 - conf), 1e-4) / count)
            assert abs(acc - conf) <= 3 * se + 0.01


class TestUsageErrors:
    def test_unknown_subcommand_exit_3(self):
        assert run(["frobnicate"]) == 3

    def test_missing_required_flag_exit_3(self):
        assert run(["evaluate", "--truth", "x"]) == 3
