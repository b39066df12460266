# Norms, Littlewood-Paley machinery, the mild solver and the experiment runner
