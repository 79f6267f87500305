import sys

from pyslvm.cli import main

if __name__ == "__main__":
    import warnings
    warnings.filterwarnings('ignore', category=DeprecationWarning)

    sys.exit(main())
