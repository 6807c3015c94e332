# Debias-TLL: twin temporal-grounding localizers with bias-similarity loss reweighing
