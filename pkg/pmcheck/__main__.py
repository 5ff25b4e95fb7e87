import sys

from pmcheck.cli import main

sys.exit(main())
