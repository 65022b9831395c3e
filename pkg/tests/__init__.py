"""Tests package for phone mixup."""
