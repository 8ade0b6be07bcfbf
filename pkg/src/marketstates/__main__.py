import sys

from marketstates.cli import main

sys.exit(main())
