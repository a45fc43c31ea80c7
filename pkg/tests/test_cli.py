import json

import pytest

from maxsim.cli import contrastive_drift, main


def _run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    report = json.loads(captured.out) if captured.out.strip() else None
    return code, report, captured.err


def _scrub_timing(obj):
    if isinstance(obj, dict):
        return {k: (0.0 if k.startswith("wall_ms") else _scrub_timing(v)) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_scrub_timing(v) for v in obj]
    return obj


@pytest.fixture
def corpus_and_query(tmp_path, capsys):
    corpus = tmp_path / "corpus.mxs"
    query = tmp_path / "query.mxs"
    assert main(["generate", str(corpus), "--docs", "40", "--dim", "16", "--max-len", "24", "--seed", "3"]) == 0
    assert main(["generate", str(query), "--docs", "1", "--dim", "16", "--max-len", "8", "--seed", "4"]) == 0
    capsys.readouterr()
    return str(query), str(corpus)


class TestScore:
    def test_exit_zero_and_schema(self, corpus_and_query, capsys):
        query, corpus = corpus_and_query
        code, report, err = _run(capsys, "score", query, corpus, "--topk", "5")
        assert code == 0
        assert report["schema_version"] == 1
        assert report["passed"] is True
        assert report["results"]["checks"]["traffic_matches_model"] is True
        assert len(report["results"]["rankings"][0]) == 5
        assert "PASS" in err

    def test_topk_matches_exhaustive(self, corpus_and_query, capsys):
        query, corpus = corpus_and_query
        _, full, _ = _run(capsys, "score", query, corpus)
        _, top, _ = _run(capsys, "score", query, corpus, "--topk", "20")
        assert top["results"]["rankings"][0] == full["results"]["rankings"][0][:20]

    def test_block_streaming_matches_in_memory(self, corpus_and_query, capsys):
        query, corpus = corpus_and_query
        _, full, _ = _run(capsys, "score", query, corpus, "--topk", "10")
        code, blocked, _ = _run(capsys, "score", query, corpus, "--topk", "10", "--block", "7")
        assert code == 0
        assert blocked["results"]["strategy"] == "streamed_blocks"
        assert blocked["results"]["rankings"] == full["results"]["rankings"]

    def test_int8_engages_two_stage(self, corpus_and_query, capsys):
        query, corpus = corpus_and_query
        code, report, _ = _run(capsys, "score", query, corpus, "--int8", "--topk", "10")
        assert code == 0
        assert report["results"]["strategy"] == "int8_two_stage"

    def test_missing_file_fails_without_output(self, corpus_and_query, capsys):
        query, _ = corpus_and_query
        code, report, err = _run(capsys, "score", query, "/nonexistent.mxs")
        assert code != 0
        assert report is None  # no partial machine output
        assert "error" in err

    def test_report_deterministic_modulo_timing(self, corpus_and_query, capsys):
        query, corpus = corpus_and_query
        _, a, _ = _run(capsys, "score", query, corpus, "--topk", "5")
        _, b, _ = _run(capsys, "score", query, corpus, "--topk", "5")
        assert _scrub_timing(a) == _scrub_timing(b)

    def test_tile_flag_and_out_file(self, corpus_and_query, capsys, tmp_path):
        query, corpus = corpus_and_query
        out = tmp_path / "report.json"
        code, report, _ = _run(capsys, "score", query, corpus, "--tile", "8,16,32",
                               "--topk", "3", "--out", str(out))
        assert code == 0
        assert report["config"]["tile"] == [8, 16, 32]
        assert json.loads(out.read_text()) == report

    def test_threads_env_default(self, corpus_and_query, capsys, monkeypatch):
        query, corpus = corpus_and_query
        monkeypatch.setenv("MXS_THREADS", "3")
        _, report, _ = _run(capsys, "score", query, corpus)
        assert report["environment"]["threads"] == 3


class TestGenerate:
    def test_packed_layout_for_ragged(self, tmp_path, capsys):
        out = tmp_path / "ragged.mxs"
        code, report, _ = _run(
            capsys, "generate", str(out), "--docs", "30", "--len-dist", "hotpot",
            "--max-len", "32", "--layout", "packed",
        )
        assert code == 0 and out.exists()
        assert 0.1 < report["results"]["fill_ratio"] < 0.8

    def test_dense_ragged_rejected(self, tmp_path, capsys):
        code, report, err = _run(
            capsys, "generate", str(tmp_path / "x.mxs"), "--len-dist", "ragged", "--layout", "dense",
        )
        assert code != 0 and report is None


class TestGradcheck:
    def test_default_shape_passes(self, capsys):
        code, report, _ = _run(capsys, "gradcheck", "--steps", "5")
        assert code == 0
        res = report["results"]
        assert res["grad_max_abs_diff"] == 0.0
        assert round(res["grad_cosine_q"], 7) == 1.0
        assert res["training_loop"]["max_rel_drift"] <= 1e-4

    def test_report_deterministic_modulo_timing(self, capsys):
        _, a, _ = _run(capsys, "gradcheck", "--steps", "3")
        _, b, _ = _run(capsys, "gradcheck", "--steps", "3")
        assert _scrub_timing(a) == _scrub_timing(b)

    def test_seed_change_same_contract(self, capsys):
        code, _, _ = _run(capsys, "gradcheck", "--steps", "3", "--seed", "9")
        assert code == 0

    def test_degenerate_single_token_docs(self, capsys):
        # argmax forced to column zero everywhere
        code, report, _ = _run(capsys, "gradcheck", "--shape", "2,3,4,1,8", "--steps", "3")
        assert code == 0
        assert report["results"]["grad_max_abs_diff"] == 0.0


class TestBench:
    def test_forward_suite_single_repeat(self, capsys):
        code, report, _ = _run(capsys, "bench", "--suite", "forward", "--repeats", "1",
                               "--docs", "4", "--sizes", "8,16,8")
        assert code == 0
        rows = report["results"]["rows"]
        assert len(rows) == 1 and rows[0]["scores_match_oracle"]

    def test_traffic_suite_exact(self, capsys):
        code, report, _ = _run(capsys, "bench", "--suite", "traffic", "--docs", "4",
                               "--sizes", "8,16,8;16,8,4")
        assert code == 0
        assert all(r["model_matches"] for r in report["results"]["rows"])

    def test_tilesweep_reports_four_rows_plus_flatness(self, capsys):
        code, report, _ = _run(capsys, "bench", "--suite", "tilesweep", "--repeats", "1", "--docs", "2")
        assert code == 0
        rows = report["results"]["rows"]
        assert len(rows) == 5  # four chunk rows and one flatness row
        assert all(r["scores_match_oracle"] for r in rows[:4])
        assert "flatness_max_over_min_minus_one" in rows[4]

    def test_report_deterministic_modulo_timing(self, capsys):
        args = ("bench", "--suite", "traffic", "--docs", "4", "--sizes", "8,16,8")
        _, a, _ = _run(capsys, *args)
        _, b, _ = _run(capsys, *args)
        assert _scrub_timing(a) == _scrub_timing(b)

    def test_varlen_suite(self, capsys):
        code, report, _ = _run(capsys, "bench", "--suite", "varlen", "--docs", "36")
        assert code == 0
        by_dist = {r["length_dist"]: r for r in report["results"]["rows"]}
        assert by_dist["const"]["work_ratio"] == 1.0
        assert abs(by_dist["ragged"]["work_ratio"] - by_dist["ragged"]["fill_ratio"]) < 1e-12

    def test_stream_suite_flat_peak(self, capsys):
        code, report, _ = _run(capsys, "bench", "--suite", "stream", "--docs", "3000")
        assert code == 0
        rows = report["results"]["rows"]
        assert rows[-1]["peak_flat_within_1pct"] is True


class TestContrastiveDrift:
    def test_loss_decreases_and_paths_agree(self):
        out = contrastive_drift(n_docs=4, len_q=6, len_d=8, dim=8, steps=25, seed=1)
        assert out["loss_last_dense"] < out["loss_first"]
        assert out["max_rel_drift"] <= 1e-4
