import { ViewerApp } from "./ui.js";

const root = document.getElementById("app");
if (root !== null) {
  const app = new ViewerApp(root);
  void app.start();
}
