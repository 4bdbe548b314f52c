import sys

from video2plan.cli import main

sys.exit(main())
