import numpy as np
import pytest

from mmgenre import forest
from mmgenre.data import Embeddings
from mmgenre.forest import (DecisionTree, MetadataRecord, best_split, build_vocab, encode_metadata,
                            forest_scores, train_forest)
from oracles import exhaustive_split


def test_depth_one_tree_four_points():
    X = np.array([[1.0, 5.0], [2.0, 1.0], [3.0, 4.0], [4.0, 2.0]])
    y = np.array([0, 1, 0, 1])
    tree = DecisionTree(max_depth=1, min_leaf=1).fit(X, y)
    best, argmins = exhaustive_split(X, y)
    assert (tree.feature[0], tree.threshold[0]) in argmins
    assert best == 0.0 and (1, 3.0) in argmins


def test_gini_split_matches_enumeration(rng):
    for _ in range(200):
        n = int(rng.integers(4, 21))
        d = int(rng.integers(1, 6))
        X = rng.integers(0, 6, size=(n, d)).astype(float) if rng.random() < 0.5 else rng.standard_normal((n, d))
        y = rng.integers(0, int(rng.integers(2, 4)), size=n)
        min_leaf = int(rng.integers(1, 3))
        if len({tuple(r) for r in X}) < 2:
            continue
        split = best_split(X, y, int(y.max()) + 1, np.arange(d), min_leaf)
        try:
            best, argmins = exhaustive_split(X, y, min_leaf)
        except ValueError:  # no admissible split
            assert split is None
            continue
        assert split is not None
        assert abs(split[2] - best) < 1e-12
        assert (split[0], split[1]) in argmins


def test_separable_feature_gives_perfect_stump(rng):
    X = rng.standard_normal((40, 5))
    y = (X[:, 2] > 0.1).astype(int)
    tree = DecisionTree(min_leaf=2).fit(X, y)
    assert tree.depth == 1 and tree.feature[0] == 2
    rf = train_forest(X, y, n_trees=15, seed=1)
    assert np.array_equal(rf.predict(X)[:, 0], y)
    dup = train_forest(np.vstack([X, X]), np.r_[y, y], n_trees=15, seed=1)
    assert np.array_equal(dup.predict(X)[:, 0], y)


def test_constant_features_do_not_crash():
    X = np.ones((10, 3))
    y = np.array([0, 1] * 5)
    tree = DecisionTree().fit(X, y)
    assert tree.depth == 0 and np.allclose(tree.value[0], [0.5, 0.5])
    train_forest(X, np.c_[y, 1 - y], n_trees=3)


def test_leaf_probabilities_sum_to_one(rng):
    X = rng.standard_normal((60, 4))
    y = rng.integers(0, 3, size=60)
    tree = DecisionTree(max_features="sqrt", rng=0).fit(X, y)
    leaves = tree.feature < 0
    assert np.allclose(tree.value[leaves].sum(axis=1), 1.0)
    assert np.isfinite(tree.threshold).all()


def test_monotone_feature_transform_invariance(rng):
    X = rng.standard_normal((50, 3))
    y = ((X[:, 0] + 0.5 * X[:, 1]) > 0).astype(int)
    Xt = X.copy()
    Xt[:, 1] = np.exp(3 * Xt[:, 1])
    # midpoint thresholds move under the transform, so compare on points whose
    # feature values were seen in training
    ta, tb = DecisionTree(rng=4).fit(X, y), DecisionTree(rng=4).fit(Xt, y)
    assert np.array_equal(ta.feature, tb.feature)
    assert np.array_equal(ta.apply(X), tb.apply(Xt))
    assert np.array_equal(ta.predict(X), tb.predict(Xt))


def test_forest_is_reproducible(rng):
    X = rng.standard_normal((40, 6))
    Y = rng.integers(0, 2, size=(40, 3))
    a = train_forest(X, Y, n_trees=10, seed=5)
    b = train_forest(X, Y, n_trees=10, seed=5)
    assert a.to_dict() == b.to_dict()
    c = forest.RandomForest.from_dict(a.to_dict())
    assert np.array_equal(c.vote_fraction(X), a.vote_fraction(X))


def test_forest_scores_logits(rng):
    X = rng.standard_normal((30, 4))
    y = (X[:, 0] > 0).astype(int)
    rf = train_forest(X, y, n_trees=8, seed=0)
    ms = forest_scores(rf, X)
    p = rf.vote_fraction(X)
    assert np.allclose(ms.scores[p == 1.0], np.log((1 - 1e-6) / 1e-6))
    assert abs(forest.votes_to_logits(0.5)) < 1e-15
    assert abs(np.log((1 - 1e-6) / 1e-6) - 13.8155) < 1e-4


def test_votes_match_per_tree_traversal(rng):
    X = rng.standard_normal((80, 5))
    Y = (rng.random((80, 2)) < 0.4).astype(int)
    rf = train_forest(X, Y, n_trees=12, seed=2)
    Xq = rng.standard_normal((20, 5))

    def walk(tree, x):
        i = 0
        while tree.feature[i] >= 0:
            i = tree.left[i] if x[tree.feature[i]] <= tree.threshold[i] else tree.right[i]
        return tree.value[i]

    for k, bf in enumerate(rf.forests):
        votes = [sum(walk(t, x)[1] > 0.5 for t in bf.trees) for x in Xq]
        assert np.array_equal(bf.votes(Xq), votes)


# -- metadata encoding -------------------------------------------------------


def glove3():
    return Embeddings({"the": np.array([1.0, 2.0, 3.0]), "matrix": np.array([0.0, 1.0, 0.0])}, 3)


def test_all_missing_record():
    rec = MetadataRecord.from_row({"id": "x"})
    vocab = build_vocab([rec])
    v = encode_metadata(rec, vocab, glove3())
    assert v.tolist() == [-1.0] * 6 + [0.0] * 6 + [0.0] * 3
    assert len(encode_metadata(rec, vocab, dim=300)) == 312


def test_title_mean_embedding():
    rec = MetadataRecord.from_row({"movie_title": "The the"})
    v = encode_metadata(rec, build_vocab([rec]), glove3())
    assert np.array_equal(v[12:], [1.0, 2.0, 3.0])
    rec = MetadataRecord.from_row({"movie_title": "The Matrix Reloaded"})
    assert np.allclose(encode_metadata(rec, build_vocab([rec]), glove3())[12:], [0.5, 1.5, 1.5])


def test_category_codes_round_trip():
    rows = [{"director_name": d, "actor_1_name": a, "actor_2_name": "Z", "language": "English"}
            for d, a in [("A", "P"), ("B", "Q"), ("A", "Q"), ("C", "Q")]]
    recs = [MetadataRecord.from_row(r) for r in rows]
    vocab = build_vocab(recs)
    assert vocab["director_name"].encode("A") == 1  # most frequent first
    assert vocab["director_name"].encode("unseen") == 0
    for rec in recs:
        for f in forest.CATEGORICAL_FIELDS:
            val = rec.categorical[f]
            table = vocab[forest._TABLE_OF[f]]
            assert table.decode(table.encode(val)) == val
    # actors share one table
    assert vocab["actor"].encode("Z") == 1 and vocab["actor"].encode("Q") == 2


def test_negative_and_empty_numeric_are_missing():
    rec = MetadataRecord.from_row({"duration": "-5", "num_voted_users": "", "movie_facebook_likes": "12"})
    v = encode_metadata(rec, build_vocab([rec]), dim=2)
    assert v[1] == -1.0 and v[5] == -1.0 and v[4] == 12.0


def test_metadata_table_reader(tmp_path):
    header = ["id"] + list(forest.METADATA_FIELDS)
    row = ["m1", "100", "120", "2", "50", "10", "3000", "Nolan", "A", "B", "C", "English", "PG-13", "The Matrix"]
    p = tmp_path / "meta.tsv"
    p.write_text("\t".join(header) + "\n" + "\t".join(row) + "\n")
    recs = forest.read_metadata_table(p)
    assert recs[0].id == "m1" and recs[0].numeric["duration"] == 120.0
    assert recs[0].categorical["content_rating"] == "PG-13" and recs[0].movie_title == "The Matrix"
    bad = tmp_path / "bad.tsv"
    bad.write_text("id\tfoo\n1\t2\n")
    with pytest.raises(ValueError, match="header"):
        forest.read_metadata_table(bad)
