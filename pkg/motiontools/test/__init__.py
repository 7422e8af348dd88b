from .unittesthelper import run_all
