"""Both training phases end to end on a small bridge instance.

The load-bearing check is the equivalence run: with degree budgets at
least as large as every score row and a single train batch, the sampled
trainer must reproduce the full-graph trainer step for step, because
sampling full rows consumes no randomness and batch statistics cover the
same train rows either way.  In float64 the histories agree to round-off.
"""

import functools
from dataclasses import replace

import numpy as np
import pytest

from sparsegt.attention import TemperatureSchedule, temperature_at
from sparsegt.datasets import SyntheticSpec, gen_bridge_task, gen_dataset
from sparsegt.errors import ContractError, DivergenceError
from sparsegt.graphs import TEST, TRAIN, VAL, augment, build_expander
from sparsegt.numerics import load_checkpoint
from sparsegt.pipeline import (TrainConfig, config_from_dict, config_to_dict,
                               edge_percent, metric_value, predict,
                               predicted_labels, resolve_task,
                               save_history_csv, train_estimator, train_final)
from sparsegt.sampling import (ScoreLayer, ScoreSet, load_scores_npz,
                               uniform_scores, validate_scores)


@functools.lru_cache(maxsize=None)
def _toy():
    g = gen_bridge_task(SyntheticSpec(seed=2, num_components=4,
                                      component_size=8, num_bridges=1))
    pattern = augment(g, build_expander(32, num_cycles=2, seed=1), 2)
    return g, pattern


@functools.lru_cache(maxsize=None)
def _toy_scores():
    g, pattern = _toy()
    cfg = TrainConfig(width=4, layers=2, epochs=12, lr=0.02, seed=0)
    return train_estimator(g, pattern, cfg).scores


class TestConfig:
    def test_validation(self):
        for bad in (dict(loss="hinge"), dict(metric="f1"), dict(ablation="x"),
                    dict(dtype="float16"), dict(dropout=1.0), dict(epochs=-1),
                    dict(eval_samples=0)):
            with pytest.raises(ContractError):
                TrainConfig(**bad)

    def test_degs_coerced_to_int_tuple(self):
        cfg = TrainConfig(degs=[4.0, 8.0])
        assert cfg.degs == (4, 8)
        assert all(isinstance(d, int) for d in cfg.degs)

    def test_dict_roundtrip(self):
        cfg = TrainConfig(width=8, degs=(3, 5), ablation="uniform",
                          dtype="float64")
        d = config_to_dict(cfg)
        assert d["degs"] == [3, 5]
        assert config_from_dict(d) == cfg


class TestResolveTask:
    def test_auto_mapping(self):
        assert resolve_task(np.array([0, 1, 1]), "auto") == ("bce", 1)
        assert resolve_task(np.array([0, 0]), "auto") == ("bce", 1)
        assert resolve_task(np.array([0, 2, 1]), "auto") == ("ce", 3)
        assert resolve_task(np.zeros((4, 3)), "auto") == ("multilabel", 3)

    def test_pinned_ce_on_binary(self):
        assert resolve_task(np.array([0, 1]), "ce") == ("ce", 2)

    def test_rejections(self):
        with pytest.raises(ContractError, match="bce"):
            resolve_task(np.array([0, 1, 2]), "bce")
        with pytest.raises(ContractError, match="multilabel"):
            resolve_task(np.array([0, 1]), "multilabel")
        with pytest.raises(ContractError, match="multilabel"):
            resolve_task(np.zeros((2, 2)), "ce")
        with pytest.raises(ContractError, match="nonnegative"):
            resolve_task(np.array([-1, 0]), "auto")
        with pytest.raises(ContractError, match="1-d or 2-d"):
            resolve_task(np.zeros((2, 2, 2)), "auto")


class TestMetrics:
    def test_predicted_labels(self):
        np.testing.assert_array_equal(
            predicted_labels("ce", np.array([[0.2, 0.8], [0.9, 0.1]])), [1, 0])
        np.testing.assert_array_equal(
            predicted_labels("bce", np.array([0.4, 0.6])), [0, 1])

    def test_auc_paths(self):
        assert metric_value("bce", "auc", np.array([0.1, 0.4, 0.35, 0.8]),
                            np.array([0, 0, 1, 1])) == pytest.approx(0.75)
        probs = np.array([[0.9, 0.1], [0.2, 0.8]])
        labels = np.array([[1, 0], [0, 1]])
        assert metric_value("multilabel", "auc", probs, labels) == 1.0
        with pytest.raises(ContractError, match="auc"):
            metric_value("ce", "auc", np.ones((2, 3)) / 3, np.array([0, 1]))

    def test_accuracy(self):
        assert metric_value("ce", "accuracy", np.array([[0.6, 0.4]]),
                            np.array([0])) == 1.0


class TestEdgePercent:
    def test_hand_ratio(self):
        # rows of length 3, 6, 9 under degree 5: 13 of 18 entries reachable
        sl = ScoreLayer(row_ptr=np.array([0, 3, 9, 18]),
                        col_idx=np.arange(18) % 3,
                        values=np.ones(18))
        pct = edge_percent(ScoreSet(n=3, layers=(sl,)), (5,))
        assert pct == pytest.approx(72.22222222222223, abs=1e-10)

    def test_contracts(self):
        sl = ScoreLayer(row_ptr=np.array([0, 1]), col_idx=np.array([0]),
                        values=np.ones(1))
        with pytest.raises(ContractError, match="budgets"):
            edge_percent(ScoreSet(n=1, layers=(sl,)), (2, 2))
        empty = ScoreLayer(row_ptr=np.array([0, 0]),
                           col_idx=np.array([], dtype=np.int64),
                           values=np.array([]))
        with pytest.raises(ContractError, match="empty"):
            edge_percent(ScoreSet(n=1, layers=(empty,)), (2,))


class TestEstimator:
    def test_learns_separable_task(self):
        spec = SyntheticSpec(generator="sbm_homophily", seed=4, blocks=2,
                             block_size=12, p_intra=0.4, p_inter=0.05,
                             noise=0.05)
        g = gen_dataset(spec)
        pattern = augment(g, build_expander(24, num_cycles=2, seed=3), 2)
        cfg = TrainConfig(width=4, layers=2, epochs=20, lr=0.02, seed=0)
        res = train_estimator(g, pattern, cfg)
        losses = [h[1] for h in res.history]
        assert len(losses) == 20
        assert losses[-1] < losses[0]
        assert res.best_val >= 0.5

    def test_history_and_selection_bookkeeping(self):
        g, pattern = _toy()
        cfg = TrainConfig(width=4, layers=2, epochs=12, lr=0.02, seed=0)
        res = train_estimator(g, pattern, cfg)
        taus = [h[3] for h in res.history]
        sched = TemperatureSchedule(lam=cfg.lam, gamma=cfg.gamma)
        assert taus == [temperature_at(sched, e) for e in range(1, 13)]
        vals = [h[2] for h in res.history]
        assert res.best_val == max(vals)
        assert res.best_epoch == vals.index(max(vals)) + 1
        assert res.tau_final == taus[res.best_epoch - 1]
        assert res.loss_name == "bce"

    def test_scores_ride_on_the_pattern_support(self):
        g, pattern = _toy()
        scores = _toy_scores()
        validate_scores(scores)
        for sl, pl in zip(scores.layers, pattern.layers):
            np.testing.assert_array_equal(sl.row_ptr, pl.row_ptr)
            np.testing.assert_array_equal(sl.col_idx, pl.col_idx)
            np.testing.assert_array_equal(sl.edge_type, pl.edge_type)

    def test_zero_epochs_reads_init_scores(self):
        g, pattern = _toy()
        res = train_estimator(g, pattern, TrainConfig(width=4, layers=2,
                                                      epochs=0, seed=0))
        assert res.history == []
        assert res.best_epoch == 0
        assert res.tau_final == 1.0
        validate_scores(res.scores)

    def test_divergence_carries_the_epoch(self):
        g, pattern = _toy()
        feats = g.features.copy()
        feats[0, 0] = np.nan
        bad = replace(g, features=feats)
        with pytest.raises(DivergenceError) as err:
            train_estimator(bad, pattern, TrainConfig(width=4, layers=2,
                                                      epochs=5, seed=0))
        assert err.value.epoch == 1

    def test_guards(self):
        g, pattern = _toy()
        with pytest.raises(ContractError, match="ablation"):
            train_estimator(g, pattern, TrainConfig(layers=2, ablation="uniform"))
        with pytest.raises(ContractError, match="layers"):
            train_estimator(g, pattern, TrainConfig(layers=3))
        all_test = replace(g, split=np.full(g.n, TEST, dtype=np.int8))
        with pytest.raises(ContractError, match="training nodes"):
            train_estimator(all_test, pattern, TrainConfig(layers=2, epochs=1))

    def test_seed_determinism(self):
        g, pattern = _toy()
        cfg = TrainConfig(width=4, layers=2, epochs=6, seed=5)
        a = train_estimator(g, pattern, cfg)
        b = train_estimator(g, pattern, cfg)
        assert a.history == b.history
        np.testing.assert_array_equal(a.scores.layers[0].values,
                                      b.scores.layers[0].values)


class TestFinal:
    def _cfg(self, **kw):
        base = dict(width=8, layers=2, epochs=8, lr=0.02, batch_size=16,
                    degs=(4, 4), seed=0)
        base.update(kw)
        return TrainConfig(**base)

    def test_trains_and_reports(self):
        g, _ = _toy()
        res = train_final(g, _toy_scores(), self._cfg())
        assert len(res.history) == 8
        assert np.isfinite([h[1] for h in res.history]).all()
        assert res.sample_stats.rows_sampled > 0
        assert 0 < res.edge_pct <= 100.0
        assert res.loss_name == "bce"

    def test_seed_determinism(self):
        g, _ = _toy()
        a = train_final(g, _toy_scores(), self._cfg(epochs=4))
        b = train_final(g, _toy_scores(), self._cfg(epochs=4))
        assert a.history == b.history
        assert a.test_metric == b.test_metric

    def test_uniform_ablation_ignores_score_values(self):
        g, _ = _toy()
        scores = _toy_scores()

        # permute scores within each row: still valid distributions, but
        # any run that reads the values would change
        def _rev(sl):
            vals = sl.values.copy()
            for i in range(len(sl.row_ptr) - 1):
                lo, hi = sl.row_ptr[i], sl.row_ptr[i + 1]
                vals[lo:hi] = vals[lo:hi][::-1]
            return ScoreLayer(row_ptr=sl.row_ptr, col_idx=sl.col_idx,
                              values=vals, edge_type=sl.edge_type)

        bent = ScoreSet(n=scores.n, layers=tuple(_rev(sl)
                                                 for sl in scores.layers))
        cfg = self._cfg(epochs=3, ablation="uniform", prefilter=False)
        a = train_final(g, uniform_scores(_toy()[1]), cfg)
        b = train_final(g, bent, cfg)
        assert a.history == b.history

    def test_max_ablation_needs_no_rng(self):
        g, _ = _toy()
        res = train_final(g, _toy_scores(), self._cfg(epochs=3, ablation="max"))
        assert len(res.history) == 3

    def test_guards(self):
        g, _ = _toy()
        scores = _toy_scores()
        with pytest.raises(ContractError, match="ablation"):
            train_final(g, scores, self._cfg(ablation="no-temp"))
        with pytest.raises(ContractError, match="degree budgets"):
            train_final(g, scores, self._cfg(degs=(4,)))
        untyped = ScoreSet(n=scores.n, layers=tuple(
            ScoreLayer(row_ptr=sl.row_ptr, col_idx=sl.col_idx, values=sl.values)
            for sl in scores.layers))
        with pytest.raises(ContractError, match="attach_types"):
            train_final(g, untyped, self._cfg())
        broken = ScoreSet(n=scores.n, layers=tuple(
            ScoreLayer(row_ptr=sl.row_ptr, col_idx=sl.col_idx,
                       values=sl.values * 2.0, edge_type=sl.edge_type)
            for sl in scores.layers))
        with pytest.raises(ContractError, match="sums"):
            train_final(g, broken, self._cfg())

    def test_zero_epochs_evaluates_init(self):
        g, _ = _toy()
        res = train_final(g, _toy_scores(), self._cfg(epochs=0))
        assert res.history == []
        assert np.isfinite(res.test_metric)


class TestFullDegreeEquivalence:
    def test_sampled_full_degree_matches_full_graph(self):
        g, pattern = _toy()
        scores = uniform_scores(pattern)
        max_len = max(int(np.diff(sl.row_ptr).max()) for sl in scores.layers)
        assert max_len <= 20
        common = dict(width=8, layers=2, epochs=6, lr=0.02, batch_size=64,
                      degs=(20, 20), seed=3, dtype="float64", prefilter=False)
        sampled = train_final(g, scores, TrainConfig(**common))
        full = train_final(g, scores, TrainConfig(**common, full_graph=True))
        np.testing.assert_allclose([h[1] for h in sampled.history],
                                   [h[1] for h in full.history],
                                   rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose([h[2] for h in sampled.history],
                                   [h[2] for h in full.history], atol=1e-9)
        assert sampled.test_metric == pytest.approx(full.test_metric, abs=1e-9)
        for (na, pa), (nb, pb) in zip(sampled.network.named_parameters(),
                                      full.network.named_parameters()):
            assert na == nb
            # zero-init biases sit at ~1e-10 after six steps, so the
            # absolute floor has to sit above their round-off spread
            np.testing.assert_allclose(pa.data, pb.data, rtol=1e-7, atol=1e-8)

    def test_full_degree_sampling_consumes_no_rng(self):
        # same plans whatever the seed, because every row fits the budget
        g, pattern = _toy()
        scores = uniform_scores(pattern)
        common = dict(width=4, layers=2, epochs=2, batch_size=64,
                      degs=(20, 20), seed=0, prefilter=False)
        a = train_final(g, scores, TrainConfig(**common))
        assert a.sample_stats.uniform_fallbacks == 0


class TestPredict:
    def test_chunking_invariance(self):
        g, _ = _toy()
        scores = _toy_scores()
        res = train_final(g, scores, TrainConfig(width=8, layers=2, epochs=4,
                                                 batch_size=16, degs=(3, 3),
                                                 seed=1))
        nodes = np.arange(g.n)
        p_small, l_small = predict(res.network, g.features, scores, (3, 3),
                                   nodes, seed=9, batch_size=5,
                                   loss_name=res.loss_name)
        p_big, l_big = predict(res.network, g.features, scores, (3, 3),
                               nodes, seed=9, batch_size=64,
                               loss_name=res.loss_name)
        assert np.abs(p_small - p_big).max() < 1e-6
        np.testing.assert_array_equal(l_small, l_big)

    def test_sample_averaging_is_reproducible(self):
        g, _ = _toy()
        scores = _toy_scores()
        res = train_final(g, scores, TrainConfig(width=8, layers=2, epochs=3,
                                                 batch_size=16, degs=(3, 3),
                                                 seed=1))
        nodes = g.split_idx(TEST)
        p1, _ = predict(res.network, g.features, scores, (3, 3), nodes,
                        seed=2, n_samples=3, loss_name=res.loss_name)
        p2, _ = predict(res.network, g.features, scores, (3, 3), nodes,
                        seed=2, n_samples=3, loss_name=res.loss_name)
        np.testing.assert_array_equal(p1, p2)
        assert np.all((p1 >= 0) & (p1 <= 1))
        with pytest.raises(ContractError):
            predict(res.network, g.features, scores, (3, 3), nodes, n_samples=0)


class TestRunDirs:
    def test_estimator_layout(self, tmp_path):
        g, pattern = _toy()
        cfg = TrainConfig(width=4, layers=2, epochs=3, seed=0)
        res = train_estimator(g, pattern, cfg, run_dir=tmp_path / "est")
        d = tmp_path / "est"
        import json
        meta = json.loads((d / "config.json").read_text())
        assert meta["role"] == "estimator"
        assert config_from_dict({k: v for k, v in meta.items() if k != "role"}) == cfg
        lines = (d / "history.csv").read_text().splitlines()
        assert lines[0] == "epoch,loss,val_metric,tau"
        assert len(lines) == 4
        state = load_checkpoint(d / "ckpt" / "estimator.ckpt")
        res.network.load_state_dict(state)       # shapes must line up
        stored = load_scores_npz(d / "scores" / "scores.npz")
        validate_scores(stored)
        metrics = json.loads((d / "metrics.json").read_text())
        assert {"best_epoch", "best_val", "test_metric", "tau_final",
                "loss"} <= set(metrics)

    def test_final_layout(self, tmp_path):
        g, _ = _toy()
        cfg = TrainConfig(width=8, layers=2, epochs=3, batch_size=16,
                          degs=(4, 4), seed=0)
        train_final(g, _toy_scores(), cfg, run_dir=tmp_path / "fin")
        d = tmp_path / "fin"
        import json
        assert json.loads((d / "config.json").read_text())["role"] == "final"
        assert (d / "ckpt" / "final.ckpt").exists()
        metrics = json.loads((d / "metrics.json").read_text())
        assert {"edge_pct", "rows_sampled", "best_epoch"} <= set(metrics)


def test_history_csv_format(tmp_path):
    save_history_csv(tmp_path / "h.csv", [(1, 0.5, 0.25, 1.0),
                                          (2, 0.25, float("nan"), 0.99)])
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,val_metric,tau"
    assert lines[1] == "1,0.5,0.25,1"
    assert lines[2].startswith("2,0.25,nan,")
