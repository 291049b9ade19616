#!/usr/bin/env python3
"""Score generated opinions: overlap metrics, sentencing error, screening.

Builds a small gold corpus, perturbs some outputs the way a weak generator
would, and walks through evaluate_outputs, the three screening questions, the
corpus-level combined score, and the pairwise comparison prompt.
"""
from lexchain import (
    build_pairwise_prompt,
    evaluate_outputs,
    extract_sentence_months,
    load_chain_library,
    screen_corpus,
    screen_opinion,
    synthesize_corpus,
)
from lexchain.cli import default_chains_dir

library = load_chain_library(default_chains_dir())
corpus = synthesize_corpus(seed=3, library=library, charges=["robbery", "theft"],
                           cases_per_charge=5)

# --- gold against gold: every metric saturates --------------------------------
gold = {rec.case_id: rec.opinion for rec in corpus}
report = evaluate_outputs(corpus, gold)
print("gold vs gold:", {k: round(v, 4) for k, v in report.items()
                        if k != "cases"})

# --- a weak generator: wrong months on some cases, truncation on others -------
degraded = {}
for i, rec in enumerate(corpus):
    if i % 3 == 0:
        start, end = rec.sentencing_span
        clause = f"{rec.sentence_months + 24} months of fixed-term imprisonment"
        degraded[rec.case_id] = rec.opinion[:start] + clause + rec.opinion[end:]
    elif i % 3 == 1:
        degraded[rec.case_id] = rec.opinion[: len(rec.opinion) // 2]
    else:
        degraded[rec.case_id] = rec.opinion
report = evaluate_outputs(corpus, degraded)
print("degraded    :", {k: round(v, 4) for k, v in report.items()
                        if k != "cases"})

# --- screening: who, what, how long -------------------------------------------
rec = corpus[0]
verdict = screen_opinion(degraded[rec.case_id], rec, library[rec.charge])
print(f"\nscreening {rec.case_id} (months shifted by +24):")
print("  defendant_ok :", verdict.defendant_ok)
print("  situation_ok :", verdict.situation_ok)
print("  sentencing_ok:", verdict.sentencing_ok,
      f"(gold {rec.sentence_months}, found "
      f"{extract_sentence_months(degraded[rec.case_id])}, matched chain "
      f"{verdict.matched_chain})")

report = screen_corpus(corpus, degraded, library)
print("\ncorpus screening accuracies:")
for key in ("defendant_accuracy", "situation_accuracy", "sentencing_accuracy",
            "combined_score"):
    print(f"  {key:20s} {report[key]:6.2f}")

# --- pairwise comparison prompt for an external judge model -------------------
prompt = build_pairwise_prompt(rec.fact, gold[rec.case_id], degraded[rec.case_id])
print("\npairwise prompt (first 400 chars):")
print(prompt[:400])
