from wedgenet.cli import main

raise SystemExit(main())
