"""Orchestration of data generation, filtering, training, view selection and evaluation."""
