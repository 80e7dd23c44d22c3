"""Hyperparameter optimization with conformalized quantile regression."""
