"""
=============================================
Error rates with traceback counts
=============================================
"""

# %%
from gatedhtr.metrics import char_counts, evaluate_pairs, format_report, word_counts

ref, hyp = "the quick brown fox", "the quikc brown fx"
print("chars:", char_counts(ref, hyp))
print("words:", word_counts(ref, hyp))

# %%
# Corpus rates are micro-averaged: total edits over total reference length.

report = evaluate_pairs([("hello world", "hello word"), ("abc", "abc"), ("xy", "")], ["a", "b", "c"])
print(f"CER {report.cer:.3f}  WER {report.wer:.3f}  SER {report.ser:.3f}")
print(format_report(report))
