"""What the ranking metric rewards and what it penalizes.

NDCG@n scores one user's ranked list against the items they actually
consumed in the holdout. Each hit at 1-based rank i earns 1/log2(i+1);
the sum is divided by the score of a hypothetical list with all n
positions relevant, so 1.0 means a perfect list.
"""

from recfuse.metrics import dcg, idcg, ndcg_model, ndcg_user


def main():
    holdout = {"tron", "alien"}

    print("holdout items:", sorted(holdout))
    print()
    for ranked in (["tron", "alien", "heat"],
                   ["tron", "heat", "alien"],
                   ["heat", "tron", "alien"],
                   ["heat", "drive", "brick"]):
        score = ndcg_user(ranked, holdout, n=3)
        print(f"  ndcg@3 {score:.4f}  for {ranked}")
    discounts = [round(dcg([0] * i + [1]), 4) for i in range(3)]
    print()
    print("Hits near the top dominate: the gain at ranks 1..3 is", discounts)

    # A list shorter than n keeps the full-length denominator, so it is
    # penalized rather than graded on a curve.
    print()
    print("short list, same hits:")
    print(f"  ndcg@3 {ndcg_user(['tron'], holdout, 3):.4f}  for ['tron']")
    print(f"  idcg(3) = {idcg(3):.4f} stays the denominator either way")

    # Model-level scores average over users; users whose holdout is empty
    # are excluded by default because no list can score on them.
    lists = {"ana": ["tron", "heat"], "bo": ["alien"], "cy": ["drive"]}
    holdouts = {"ana": frozenset({"tron"}), "bo": frozenset({"alien"}),
                "cy": frozenset()}
    print()
    print("model-level mean over scoreable users:",
          round(ndcg_model(lists, holdouts, n=2), 4))
    print("counting empty-holdout users as zero instead:",
          round(ndcg_model(lists, holdouts, n=2,
                           include_empty_holdout_users=True), 4))


if __name__ == "__main__":
    main()
