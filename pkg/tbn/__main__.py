import sys

from tbn.cli import main

sys.exit(main())
