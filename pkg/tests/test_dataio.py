import numpy as np
import pytest

from setseq.checkpoint import load_checkpoint, save_checkpoint
from setseq.dataio import (DataError, read_csv, read_episodes, read_episodes_binary,
                           read_episodes_jsonl, write_csv, write_episodes_binary,
                           write_episodes_jsonl, load_market, save_market)
from setseq.market import MarketConfig, generate_market


class TestEpisodeFormats:
    def test_jsonl_round_trip(self, small_episodes, tmp_path):
        path = tmp_path / "eps.jsonl"
        write_episodes_jsonl(path, small_episodes)
        back = read_episodes_jsonl(path)
        assert len(back) == len(small_episodes)
        for a, b in zip(small_episodes, back):
            assert np.array_equal(a.states, b.states)
            assert np.array_equal(a.lam, b.lam)
            assert np.array_equal(a.true_probs, b.true_probs)
            assert np.array_equal(a.frac_default, b.frac_default)
            assert a.config == b.config and a.index == b.index

    def test_binary_round_trip(self, small_episodes, tmp_path):
        path = tmp_path / "eps.bin"
        write_episodes_binary(path, small_episodes)
        back = read_episodes_binary(path)
        for a, b in zip(small_episodes, back):
            assert np.array_equal(a.states, b.states)
            assert np.array_equal(a.lam, b.lam)
            assert np.array_equal(a.true_probs, b.true_probs)
            assert a.config == b.config

    def test_extension_dispatch(self, small_episodes, tmp_path):
        write_episodes_jsonl(tmp_path / "a.jsonl", small_episodes[:2])
        write_episodes_binary(tmp_path / "a.bin", small_episodes[:2])
        assert len(read_episodes(tmp_path / "a.jsonl")) == 2
        assert len(read_episodes(tmp_path / "a.bin")) == 2

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(DataError, match="magic"):
            read_episodes_binary(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            read_episodes(tmp_path / "absent.bin")


class TestCheckpoint:
    def test_exact_round_trip_mixed_dtypes(self, tmp_path, rng):
        params = {
            "w32": rng.standard_normal((4, 6)).astype(np.float32),
            "w64": rng.standard_normal((3,)).astype(np.float64),
            "scalar": np.float64(3.5),
        }
        save_checkpoint(tmp_path / "ck", params, meta={"note": "x"})
        back, meta = load_checkpoint(tmp_path / "ck")
        assert meta["note"] == "x"
        for key, val in params.items():
            assert back[key].data.dtype == np.asarray(val).dtype
            assert np.array_equal(back[key].data, np.asarray(val))

    def test_rejects_non_checkpoint(self, tmp_path):
        (tmp_path / "params.json").write_text('{"format": "other"}')
        (tmp_path / "params.bin").write_bytes(b"")
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path)


class TestMarketStorage:
    def test_round_trip(self, tmp_path):
        market = generate_market(MarketConfig(n_assets=12, t_train=20, t_test=10, seed=3))
        save_market(tmp_path / "mkt", market)
        back = load_market(tmp_path / "mkt")
        assert np.array_equal(back.returns, market.returns)
        assert np.array_equal(back.features, market.features)
        assert back.config == market.config

    def test_rejects_other_checkpoints(self, tmp_path):
        save_checkpoint(tmp_path / "ck", {"a": np.zeros(3)})
        with pytest.raises(DataError):
            load_market(tmp_path / "ck")


class TestCsv:
    def test_quoting_round_trip(self, tmp_path):
        rows = [["plain", 'with,comma', 'with"quote', "multi\nline"],
                ["1.5", "-2", "", "0"]]
        path = tmp_path / "t.csv"
        write_csv(path, ["a", "b", "c", "d"], rows)
        header, back = read_csv(path)
        assert header == ["a", "b", "c", "d"]
        assert back == [[str(v) for v in row] for row in rows]
        raw = path.read_bytes()
        assert b"\r\n" in raw  # RFC 4180 line endings
        assert b'"with""quote"' in raw

    def test_empty_rejected(self, tmp_path):
        (tmp_path / "e.csv").write_text("")
        with pytest.raises(DataError):
            read_csv(tmp_path / "e.csv")
