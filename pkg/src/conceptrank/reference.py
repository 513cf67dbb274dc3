"""Published corpus-scale reference figures (TREC-COVID round 5 / CORD-19).

These numbers come from experiments over the full 192,509-document collection
with pretrained biomedical embeddings.  They are NOT reproducible from the
desk-scale fixtures shipped here and are kept only as orientation constants.
"""

# retrieval metrics per model: (p@10, p@20, r@10, r@20, ndcg@10, ndcg@20)
REFERENCE_RETRIEVAL: dict[str, dict[str, float]] = {
    "anserini": {"p@10": 0.5400, "p@20": 0.4960, "r@10": 0.0122, "r@20": 0.0225, "ndcg@10": 0.4709, "ndcg@20": 0.4382},
    "bm25": {"p@10": 0.5520, "p@20": 0.4900, "r@10": 0.0136, "r@20": 0.0239, "ndcg@10": 0.5137, "ndcg@20": 0.4591},
    "gin": {"p@10": 0.3524, "p@20": 0.3436, "r@10": 0.0077, "r@20": 0.0150, "ndcg@10": 0.3059, "ndcg@20": 0.2991},
    "gat": {"p@10": 0.4648, "p@20": 0.4326, "r@10": 0.0108, "r@20": 0.0200, "ndcg@10": 0.4224, "ndcg@20": 0.3949},
    "npool": {"p@10": 0.5824, "p@20": 0.5220, "r@10": 0.0138, "r@20": 0.0241, "ndcg@10": 0.5338, "ndcg@20": 0.4880},
    "epool": {"p@10": 0.5960, "p@20": 0.5388, "r@10": 0.0140, "r@20": 0.0249, "ndcg@10": 0.5611, "ndcg@20": 0.5116},
    "rwpool": {"p@10": 0.5984, "p@20": 0.5392, "r@10": 0.0142, "r@20": 0.0253, "ndcg@10": 0.5619, "ndcg@20": 0.5141},
}

# concept-map pair similarity at corpus scale
REFERENCE_PAIR_SIMILARITY: dict[str, dict[str, float]] = {
    "pos_pos": {"n_pairs": 762084, "ncr": 0.0496, "ncr_plus": 0.1919, "ecr": 0.0060, "ecr_plus": 0.0078},
    "pos_neg": {"n_pairs": 1518617, "ncr": 0.0412, "ncr_plus": 0.1175, "ecr": 0.0039, "ecr_plus": 0.0052},
    "pos_bm": {"n_pairs": 140640, "ncr": 0.0380, "ncr_plus": 0.1498, "ecr": 0.0037, "ecr_plus": 0.0043},
}

REFERENCE_T_SCORES: dict[str, dict[str, float]] = {
    "pos_neg": {"ncr": 187.041, "ncr_plus": 487.078, "ecr": 83.569, "ecr_plus": 105.034},
    "pos_bm": {"ncr": 126.977, "ncr_plus": 108.808, "ecr": 35.870, "ecr_plus": 56.981},
}

# 95%-confidence critical values for the two comparisons at those sample sizes
T_CRITICAL_95: dict[str, float] = {"pos_neg": 1.6440, "pos_bm": 1.6450}
