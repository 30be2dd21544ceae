import sys

from hyperlab.main import main

sys.exit(main())
