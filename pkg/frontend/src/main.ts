/** Entry point: mount the workbench on #app against the co-served API. */

import { WorkbenchClient } from './api.js';
import { Workbench } from './workbench.js';

const root = document.getElementById('app');
if (!root) {
  throw new Error('missing #app mount point');
}
const workbench = new Workbench(new WorkbenchClient('/api/v1'), root);
void workbench.start();
