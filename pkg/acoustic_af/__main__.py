import sys

from acoustic_af.cli import main

if __name__ == "__main__":
    sys.exit(main())
