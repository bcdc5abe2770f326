import sys

from hierdet.cli import main

sys.exit(main())
